"""CSV time-series ingestion and sliding windows.

The series is split chronologically into train/val/test *before*
windowing, then z-normalized per variable with train statistics only.
"""
from dataclasses import dataclass, field
import csv

import numpy as np

from .. import rng
from ..errors import ValidationError

SPLITS = ("train", "val", "test")
TIMESTAMP_NAMES = {"date", "time", "timestamp", "datetime"}


@dataclass
class WindowedDataset:
    splits: dict  # name -> (X: n x D x L, Y: n x D x H)
    mean: np.ndarray
    std: np.ndarray
    columns: list = field(default_factory=list)

    @property
    def train(self):
        return self.splits["train"]

    @property
    def val(self):
        return self.splits["val"]

    @property
    def test(self):
        return self.splits["test"]

    @property
    def windows(self):
        X, Y = self.train
        return list(zip(X, Y))


def read_series(path):
    """Read a header + numeric-columns CSV into a (T x D) array.

    A first column named like a timestamp, or holding non-numeric values, is
    dropped.
    """
    with open(path, newline="", encoding="utf-8") as f:
        rows = [r for r in csv.reader(f) if r]
    if len(rows) < 2:
        raise ValidationError(f"{path}: need a header row and at least one data row")
    header, body = rows[0], rows[1:]
    skip_first = header[0].strip().lower() in TIMESTAMP_NAMES
    if not skip_first:
        try:
            float(body[0][0])
        except ValueError:
            skip_first = True
    start = 1 if skip_first else 0
    data = np.empty((len(body), len(header) - start))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ValidationError(f"{path}: row {i + 2} has {len(row)} cells, header has {len(header)}")
        for j in range(start, len(row)):
            try:
                data[i, j - start] = float(row[j])
            except ValueError:
                raise ValidationError(
                    f"{path}: non-numeric cell {row[j]!r} at row {i + 2}, column {j + 1}"
                ) from None
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: non-finite values")
    return data, header[start:]


def split_lengths(T, split):
    n_train = int(np.floor(T * split[0]))
    n_val = int(np.floor(T * split[1]))
    return n_train, n_val, T - n_train - n_val


def make_windows(series, L, H, stride):
    """All (input D x L, target D x H) pairs of a (T x D) block at the given stride."""
    T, D = series.shape
    starts = range(0, T - L - H + 1, stride)
    X = np.array([series[s : s + L].T for s in starts]).reshape(-1, D, L)
    Y = np.array([series[s + L : s + L + H].T for s in starts]).reshape(-1, D, H)
    return X, Y


def windows_from_array(series, L, H, stride=1, split=(0.7, 0.1, 0.2), eval_stride=None, columns=None):
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 1:
        series = series[:, None]
    eval_stride = H if eval_stride is None else eval_stride
    lengths = split_lengths(len(series), split)
    bounds = np.cumsum((0,) + lengths)
    blocks = {name: series[bounds[i] : bounds[i + 1]] for i, name in enumerate(SPLITS)}
    train = blocks["train"]
    if len(train) == 0:
        raise ValidationError("train split is empty")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    const = std < 1e-12
    # the pairwise mean of a constant column can be off by an ulp
    mean = np.where(const, train[0], mean)
    std = np.where(const, 1.0, std)
    splits = {}
    for i, name in enumerate(SPLITS):
        block = (blocks[name] - mean) / std
        if split[i] > 0 and len(block) < L + H:
            raise ValidationError(
                f"{name} split has {len(block)} rows, shorter than lookback + horizon = {L + H}"
            )
        splits[name] = make_windows(block, L, H, stride if name == "train" else eval_stride)
    return WindowedDataset(splits, mean, std, list(columns or []))


def load_csv_windows(path, L, H, stride=1, split=(0.7, 0.1, 0.2), eval_stride=None):
    series, columns = read_series(path)
    return windows_from_array(series, L, H, stride, split, eval_stride, columns)


def sine_mixture(length=600, variables=3, noise=0.1, seed=0):
    """Bundled synthetic data: sums of two sines per variable with
    incommensurate periods, plus seeded Gaussian noise. Returns (T x D)."""
    gen = rng.generator(seed, rng.DATA)
    t = np.arange(length, dtype=np.float64)
    golden = (1 + 5**0.5) / 2
    cols = []
    for j in range(variables):
        p1 = 12.0 * (1 + j * golden / 3)
        p2 = 12.0 * 2**0.5 * (1 + j / 5)
        ph1, ph2 = gen.uniform(0, 2 * np.pi, 2)
        cols.append(np.sin(2 * np.pi * t / p1 + ph1) + 0.5 * np.sin(2 * np.pi * t / p2 + ph2))
    data = np.stack(cols, axis=1)
    return data + noise * gen.standard_normal(data.shape)


def write_csv(path, series, columns=None, timestamp=True):
    series = np.asarray(series, dtype=np.float64)
    columns = columns or [f"x{j}" for j in range(series.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow((["date"] if timestamp else []) + list(columns))
        for i, row in enumerate(series):
            w.writerow(([str(i)] if timestamp else []) + [repr(float(x)) for x in row])
