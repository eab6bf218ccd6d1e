"""Rank- and entropy-collapse instrumentation with CSV export."""
from dataclasses import dataclass
from typing import Optional
import csv
import os

import numpy as np

from .errors import ValidationError
from .linalg import SingularSpectrum, effective_rank, singular_values

METRIC_COLUMNS = (
    "step",
    "loss",
    "grad_norm",
    "lambda_min",
    "escape_fired",
    "erank_repr",
    "erank_attn",
    "nuclear_attn",
    "attn_entropy",
)


@dataclass
class DiagnosticsRecord:
    step: int
    loss: float
    grad_norm: float
    lambda_min: Optional[float]
    escape_fired: bool
    # model-only fields; None for plain landscapes
    erank_repr: Optional[float] = None
    erank_attn: Optional[float] = None
    nuclear_attn: Optional[float] = None
    attn_entropy: Optional[float] = None
    spectrum_repr: Optional[SingularSpectrum] = None


def attention_entropy(A, tol=1e-9):
    """Mean row entropy (natural log) of a row-stochastic matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or np.any(A < -tol) or np.any(np.abs(A.sum(axis=1) - 1.0) > tol):
        raise ValidationError("attention matrix rows must be non-negative and sum to 1")
    P = np.clip(A, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(P), 0.0)
    return float(np.mean(-terms.sum(axis=1)))


def snapshot(step, report, Z_repr=None, A=None, full_spectrum=False):
    """Assemble a record; pass Z_repr and A as None for model-free objectives."""
    rec = DiagnosticsRecord(
        step=step,
        loss=report.loss_after,
        grad_norm=report.grad_norm,
        lambda_min=report.lambda_min_est,
        escape_fired=report.escape_fired,
    )
    if Z_repr is not None:
        spec_repr = singular_values(Z_repr)
        rec.erank_repr = effective_rank(spec_repr)
        if full_spectrum:
            rec.spectrum_repr = spec_repr
    if A is not None:
        spec_attn = singular_values(A)
        rec.erank_attn = effective_rank(spec_attn)
        rec.nuclear_attn = float(np.sum(spec_attn.values))
        rec.attn_entropy = attention_entropy(A)
    return rec


def rank_collapse_flag(history, window=20, drop_frac=0.5):
    """True when the trailing-window minimum of erank_repr falls below
    ``drop_frac`` times the maximum over the whole history."""
    if not history:
        raise ValidationError("rank_collapse_flag needs a non-empty history")
    if window < 1 or not 0 < drop_frac < 1:
        raise ValidationError("need window >= 1 and 0 < drop_frac < 1")
    eranks = [r.erank_repr for r in history if r.erank_repr is not None]
    if not eranks:
        raise ValidationError("history carries no representation ranks")
    return min(eranks[-window:]) < drop_frac * max(eranks)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def export(history, spectra, destination):
    """Write ``metrics.csv`` and one ``spectrum_<step>.csv`` per captured spectrum.

    ``spectra`` maps step -> SingularSpectrum; records that carry a spectrum
    are exported too.
    """
    path = destination
    try:
        os.makedirs(destination, exist_ok=True)
        path = os.path.join(destination, "metrics.csv")
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            for rec in history:
                w.writerow([_fmt(getattr(rec, c)) for c in METRIC_COLUMNS])
        all_spectra = dict(spectra or {})
        for rec in history:
            if rec.spectrum_repr is not None:
                all_spectra.setdefault(rec.step, rec.spectrum_repr)
        for step, spec in sorted(all_spectra.items()):
            path = os.path.join(destination, f"spectrum_{step}.csv")
            with open(path, "w", newline="", encoding="utf-8") as f:
                f.write(spec.to_csv())
    except OSError as exc:
        raise OSError(f"cannot write diagnostics to {path}: {exc}") from exc


def load_metrics(path):
    """Read a ``metrics.csv`` back into DiagnosticsRecords."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValidationError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            opt = {k: float(row[k]) if row[k] else None for k in METRIC_COLUMNS[5:]}
            out.append(
                DiagnosticsRecord(
                    step=int(row["step"]),
                    loss=float(row["loss"]),
                    grad_norm=float(row["grad_norm"]),
                    lambda_min=float(row["lambda_min"]) if row["lambda_min"] else None,
                    escape_fired=row["escape_fired"] == "1",
                    **opt,
                )
            )
    return out


def load_spectrum(path):
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return SingularSpectrum.from_csv(text).values
