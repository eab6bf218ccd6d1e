"""Run one configured experiment end to end and write its outputs.

Outputs land in ``out_dir``: ``metrics.csv``, ``spectrum_<step>.csv``,
``checkpoint.bin`` (final parameters) and ``run.json``. Everything is built
in a sibling temporary directory and moved into place only on success.
"""
from dataclasses import dataclass, field
from datetime import datetime, timezone
import json
import os
import shutil
import tempfile

import numpy as np

from .. import __version__, rng
from ..diagnostics import export, snapshot
from ..errors import EEOError, ExperimentError
from ..model import ModelShape, model_objective, mse_mae, predict, representation, unflatten
from ..objective import builtin_landscape
from ..optimizer import EEOState, iterate
from .checkpoint import save_checkpoint
from .data import SPLITS, load_csv_windows, sine_mixture, windows_from_array

EARLY_STOP_GRAD = 1e-10
PROBE_WINDOWS = 32  # windows used for representation diagnostics


@dataclass
class Task:
    obj: object
    w0: np.ndarray
    evaluate: object  # params -> {split: {metric: value}}
    probe: object = None  # params -> (Z_repr, A) or None
    baseline: dict = field(default_factory=dict)


@dataclass
class RunLog:
    config_echo: str
    started: str
    finished: str
    metrics: dict
    baseline: dict
    history: list
    reports: list
    params: np.ndarray
    escaped_count: int
    checkpoint_path: str
    out_dir: str
    generator: str = rng.GENERATOR_ID

    @property
    def final_loss(self):
        return self.reports[-1].loss_after if self.reports else None


def default_start(name, dim, seed):
    if name == "saddle":
        return np.array([1e-3, 0.0])
    if name == "two_well":
        return rng.generator(seed, rng.INIT).uniform(-1.5, 1.5, 1)
    if name == "cubic":
        return np.full(dim, 0.5)
    if name == "quadratic":
        return np.ones(dim)
    return np.zeros(dim)


def _landscape_task(cfg):
    obj = builtin_landscape(cfg.landscape_spec())
    start = cfg["landscape.start"]
    if start:
        w0 = np.array(start, dtype=np.float64)
        if len(w0) != obj.dim:
            raise ExperimentError(f"landscape.start has {len(w0)} values, landscape dim is {obj.dim}")
    else:
        w0 = default_start(cfg["landscape.name"], obj.dim, cfg.seed)

    def evaluate(w):
        return {"train": {"loss": float(obj.loss(w))}}

    return Task(obj, w0, evaluate)


def load_dataset(cfg):
    L, H = cfg["data.lookback"], cfg["data.horizon"]
    if cfg["data.path"]:
        return load_csv_windows(cfg["data.path"], L, H, cfg["data.stride"], cfg["data.split"])
    series = sine_mixture(cfg["data.length"], cfg["data.variables"], cfg["data.noise"], cfg.seed)
    return windows_from_array(series, L, H, cfg["data.stride"], cfg["data.split"])


def model_shape(cfg, D):
    return ModelShape(
        D=D,
        L=cfg["data.lookback"],
        H=cfg["data.horizon"],
        patch_len=cfg["model.patch_len"],
        d=cfg["model.d"],
        d_m=cfg["model.d_m"],
        d_out=cfg["model.d_out"],
        layers=cfg["model.layers"],
    )


def repeat_last(X, H):
    """Naive forecast: the last observed value held for H steps."""
    return np.repeat(X[:, :, -1:], H, axis=2)


def _model_task(cfg):
    ds = load_dataset(cfg)
    X, Y = ds.train
    shape = model_shape(cfg, X.shape[1])
    if cfg.task == "forecast":
        obj, w0 = model_objective(X, Y, shape, "forecast_mse", cfg.seed, cfg["model.batch_size"])
        Xp = X[:PROBE_WINDOWS]

        def evaluate(w):
            params = unflatten(w, shape)
            out = {}
            for name in SPLITS:
                Xs, Ys = ds.splits[name]
                if len(Xs):
                    mse, mae = mse_mae(predict(params, shape, Xs), Ys)
                    out[name] = {"mse": mse, "mae": mae}
            return out

        def probe(w):
            return representation(unflatten(w, shape), shape, Xp)

        baseline = {}
        for name in SPLITS:
            Xs, Ys = ds.splits[name]
            if len(Xs):
                mse, mae = mse_mae(repeat_last(Xs, shape.H), Ys)
                baseline[name] = {"mse": mse, "mae": mae}
        return Task(obj, w0, evaluate, probe, baseline)

    obj, w0 = model_objective(
        X, Y, shape, "attention_align", cfg.seed, teacher_scale=cfg["model.teacher_scale"]
    )

    def evaluate(w):
        return {"train": {"loss": float(obj.loss(w))}}

    def probe(w):
        A = obj.attention(w)
        out = A[:PROBE_WINDOWS] @ obj.Z[:PROBE_WINDOWS]
        return out.reshape(-1, out.shape[-1]), A.mean(axis=0)

    return Task(obj, w0, evaluate, probe)


def build_task(cfg):
    if cfg.task == "landscape":
        return _landscape_task(cfg)
    return _model_task(cfg)


def _run_metadata(cfg, eeo_cfg, log, steps):
    return {
        "experiment": cfg.experiment,
        "task": cfg.task,
        "package_version": __version__,
        "started": log.started,
        "finished": log.finished,
        "seed": cfg.seed,
        "optimizer_seed": eeo_cfg.seed,
        "generator": rng.GENERATOR_ID,
        "streams": {name: getattr(rng, name) for name in rng.STREAMS},
        "init": "uniform(-1/sqrt(d), 1/sqrt(d)) from the INIT stream",
        "early_stop": {"grad_norm": EARLY_STOP_GRAD, "curvature_threshold": eeo_cfg.curvature_threshold},
        "steps_run": steps,
        "escaped_count": log.escaped_count,
        "final_loss": log.final_loss,
        "metrics": log.metrics,
        "baseline": log.baseline,
        "config": cfg.echo(),
    }


def _collect(task, cfg):
    """Run the optimizer and gather diagnostics records at the configured cadence."""
    eeo_cfg = cfg.eeo_config()
    every, spec_every = cfg["diag.every"], cfg["diag.spectrum_every"]
    history = []

    def record(w, report, full):
        Z_repr = A = None
        if task.probe is not None:
            Z_repr, A = task.probe(w)
        history.append(snapshot(report.step, report, Z_repr, A, full_spectrum=full))

    def callback(state, report):
        t = report.step
        if t % every == 0 or t % spec_every == 0:
            record(state.w, report, t % spec_every == 0)

    state, reports = iterate(task.obj, EEOState.initial(task.w0, eeo_cfg), eeo_cfg, callback)
    # the last step is always recorded, also after an early stop
    if reports:
        if history and history[-1].step == reports[-1].step:
            history.pop()
        record(state.w, reports[-1], True)
    return eeo_cfg, state, reports, history


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _install(tmp, out_dir):
    if os.path.exists(out_dir):
        if not os.path.exists(os.path.join(out_dir, "run.json")):
            raise ExperimentError(f"{out_dir} exists and is not a previous run directory")
        shutil.rmtree(out_dir)
    os.replace(tmp, out_dir)


def run_experiment(cfg, out_dir=None):
    """Execute ``cfg`` and return a RunLog; writes outputs unless ``out_dir`` is False."""
    out_dir = cfg.out_dir if out_dir is None else out_dir
    started = _now()
    try:
        task = build_task(cfg)
        eeo_cfg, state, reports, history = _collect(task, cfg)
        params = state.m
        log = RunLog(
            config_echo=cfg.echo(),
            started=started,
            finished=_now(),
            metrics=task.evaluate(params),
            baseline=task.baseline,
            history=history,
            reports=reports,
            params=params,
            escaped_count=state.escaped_count,
            checkpoint_path="",
            out_dir="",
        )
    except EEOError as exc:
        raise ExperimentError(f"experiment {cfg.experiment!r}: {exc}") from exc
    if out_dir is False:
        return log
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".run-", dir=parent)
    try:
        export(history, None, tmp)
        save_checkpoint(params, os.path.join(tmp, "checkpoint.bin"))
        with open(os.path.join(tmp, "run.json"), "w", encoding="utf-8") as f:
            json.dump(_run_metadata(cfg, eeo_cfg, log, len(reports)), f, indent=2)
            f.write("\n")
        _install(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    log.out_dir = out_dir
    log.checkpoint_path = os.path.join(out_dir, "checkpoint.bin")
    return log
