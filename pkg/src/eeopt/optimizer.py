"""Escape-Explore Optimizer.

One step runs, in order: a sharpness-aware update (gradient taken at the
adversarially perturbed point w + e_w), an optional negative-curvature
escape kick, Langevin noise, and an EMA of the iterates. ``run`` returns
the EMA shadow as the final parameters.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import rng
from .errors import NumericError, ValidationError
from .linalg import power_iteration
from .objective import as_vector, central_hvp, default_hvp_step

SCALING_MODES = ("identity", "abs_param")


@dataclass(frozen=True)
class EEOConfig:
    eta: float = 1e-3
    rho: float = 0.05
    eps: float = 1e-12
    scaling_mode: str = "identity"
    alpha_fd: Optional[float] = None  # None: 1e-3 * (1 + ||w||_inf)
    negcur_kick: float = 1.0
    grad_trigger: float = 1e-2
    curvature_threshold: float = 1e-3
    probe_iters: int = 20
    check_every: int = 10
    temperature: float = 1e-4
    temp_decay: float = 0.999
    beta: float = 0.999
    seed: int = 0
    max_steps: int = 1000

    def __post_init__(self):
        checks = [
            (self.eta > 0, "eta must be > 0"),
            (self.rho >= 0, "rho must be >= 0"),
            (self.eps > 0, "eps must be > 0"),
            (self.scaling_mode in SCALING_MODES, f"scaling_mode must be one of {SCALING_MODES}"),
            (self.alpha_fd is None or self.alpha_fd > 0, "alpha_fd must be > 0"),
            (self.negcur_kick >= 0, "negcur_kick must be >= 0"),
            (self.grad_trigger >= 0, "grad_trigger must be >= 0"),
            (self.curvature_threshold > 0, "curvature_threshold must be > 0"),
            (self.probe_iters >= 1, "probe_iters must be >= 1"),
            (self.check_every >= 1, "check_every must be >= 1"),
            (self.temperature >= 0, "temperature must be >= 0"),
            (0 < self.temp_decay <= 1, "temp_decay must be in (0, 1]"),
            (0 <= self.beta <= 1, "beta must be in [0, 1]"),
            (self.max_steps >= 0, "max_steps must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)

    @property
    def escape_step(self):
        return self.negcur_kick * self.rho

    def ablate(self, sam=True, escape=True, sgld=True, ema=True):
        """Copy with the disabled mechanisms switched off."""
        changes = {}
        if not sam:
            changes["rho"] = 0.0
        if not escape:
            changes["negcur_kick"] = 0.0
        if not sgld:
            changes["temperature"] = 0.0
        if not ema:
            changes["beta"] = 0.0
        return replace(self, **changes)


@dataclass
class CurvatureEstimate:
    lam: float
    v: np.ndarray
    probes_used: int
    alpha_used: float


@dataclass
class EEOState:
    w: np.ndarray
    m: np.ndarray
    step: int = 0
    seed: int = 0
    last_curvature: Optional[CurvatureEstimate] = None
    escaped_count: int = 0
    temperature_now: float = 0.0

    @classmethod
    def initial(cls, w0, cfg):
        w0 = as_vector(w0, "w0")
        return cls(w=w0.copy(), m=w0.copy(), seed=cfg.seed, temperature_now=cfg.temperature)


@dataclass
class StepReport:
    step: int
    loss_before: float
    loss_after: float
    grad_norm: float
    sam_applied: bool
    escape_fired: bool
    lambda_min_est: Optional[float]
    noise_norm: float


def scaling(mode, w):
    if mode == "identity":
        return np.ones_like(w)
    if mode == "abs_param":
        return np.abs(w) + 1e-12
    raise ValidationError(f"unknown scaling mode {mode!r}")


def outer_perturbation(w, g, cfg):
    """e_w = rho * (s(w) * g) / (||s(w) * g|| + eps)."""
    if w.shape != g.shape:
        raise ValueError(f"w and g shapes differ: {w.shape} vs {g.shape}")
    sg = scaling(cfg.scaling_mode, w) * g
    return cfg.rho * sg / (np.linalg.norm(sg) + cfg.eps)


def _grad(obj, w, batch, what):
    g = np.asarray(obj.grad(w, batch), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient at {what}")
    return g


def sam_gradient(obj, w, cfg, batch=None, g=None):
    """Gradient at w + e_w, on the same batch used to build e_w."""
    if g is None:
        g = _grad(obj, w, batch, "w")
    e = outer_perturbation(w, g, cfg)
    try:
        return _grad(obj, w + e, batch, "w + e_w")
    except NumericError as exc:
        raise NumericError(f"{exc} (||w||={np.linalg.norm(w):.3e}, ||e_w||={np.linalg.norm(e):.3e})") from exc


def estimate_min_curvature(obj, w, cfg, batch=None, step=0):
    """Smallest Hessian eigenvalue by shifted power iteration on FD-HVPs.

    Phase one finds the largest-magnitude eigenvalue; phase two iterates
    v -> c v - H v with c = |lambda_top| + 1, whose dominant eigenvector is
    the eigenvector of the smallest eigenvalue of H.
    """
    w = as_vector(w)
    alpha = default_hvp_step(w) if cfg.alpha_fd is None else cfg.alpha_fd
    probe_seed = (cfg.seed * 1_000_003 + step) & 0xFFFFFFFFFFFFFFFF

    def hvp(v):
        return central_hvp(obj, w, v, alpha, batch)

    lam_top, _ = power_iteration(hvp, len(w), cfg.probe_iters, probe_seed)
    c = abs(lam_top) + 1.0
    lam_shift, v = power_iteration(lambda v: c * v - hvp(v), len(w), cfg.probe_iters, probe_seed + 1)
    v = v / np.linalg.norm(v)
    return CurvatureEstimate(c - lam_shift, v, 2 * cfg.probe_iters, alpha)


def negcur_escape(obj, w, est, cfg, batch=None, g=None):
    """Kick along +-v when the gradient is small and curvature is negative."""
    if g is None:
        g = _grad(obj, w, batch, "w")
    if np.linalg.norm(g) > cfg.grad_trigger or not est.lam < -cfg.curvature_threshold:
        return w, False
    step = cfg.escape_step * est.v / np.linalg.norm(est.v)
    plus, minus = w + step, w - step
    if obj.loss(minus, batch) < obj.loss(plus, batch):
        return minus, True
    return plus, True


def sgld_noise(dim, eta, T, gen):
    if T == 0:
        return np.zeros(dim)
    return np.sqrt(2.0 * eta * T) * gen.standard_normal(dim)


def ema_update(m, w, beta):
    return beta * m + (1.0 - beta) * w


def eeo_step(obj, state, cfg):
    """Advance one step; returns ``(new_state, report)``."""
    t = state.step
    w = state.w
    try:
        batch = obj.sample_batch(cfg.seed, t)
        loss_before = obj.loss(w, batch)
        g = _grad(obj, w, batch, "w")
        if cfg.rho > 0:
            g_upd = sam_gradient(obj, w, cfg, batch, g=g)
        else:
            g_upd = g
        w = w - cfg.eta * g_upd

        est = state.last_curvature
        lam = None
        fired = False
        if cfg.escape_step > 0 and t % cfg.check_every == 0:
            est = estimate_min_curvature(obj, w, cfg, batch, step=t)
            lam = est.lam
            w, fired = negcur_escape(obj, w, est, cfg, batch)

        noise = sgld_noise(len(w), cfg.eta, state.temperature_now, rng.generator(cfg.seed, rng.NOISE, t))
        if state.temperature_now > 0:
            w = w + noise
        if not np.all(np.isfinite(w)):
            raise NumericError("iterate became non-finite")
        m = ema_update(state.m, w, cfg.beta)
        loss_after = obj.loss(w, batch)
    except NumericError as exc:
        raise NumericError(f"step {t}: {exc}") from exc

    new_state = EEOState(
        w=w,
        m=m,
        step=t + 1,
        seed=state.seed,
        last_curvature=est,
        escaped_count=state.escaped_count + int(fired),
        temperature_now=cfg.temperature * cfg.temp_decay ** (t + 1),
    )
    report = StepReport(
        step=t,
        loss_before=float(loss_before),
        loss_after=float(loss_after),
        grad_norm=float(np.linalg.norm(g)),
        sam_applied=cfg.rho > 0,
        escape_fired=fired,
        lambda_min_est=lam,
        noise_norm=float(np.linalg.norm(noise)),
    )
    return new_state, report


def iterate(obj, state, cfg, callback=None):
    """Step from ``state`` until ``cfg.max_steps`` or early stop.

    Stops early once the gradient norm drops to 1e-10 and the latest
    curvature probe shows no negative curvature. ``callback(state, report)``
    is called after every step. Returns ``(state, history)``.
    """
    history = []
    while state.step < cfg.max_steps:
        state, report = eeo_step(obj, state, cfg)
        history.append(report)
        if callback is not None:
            callback(state, report)
        est = state.last_curvature
        if report.grad_norm <= 1e-10 and est is not None and est.lam >= -cfg.curvature_threshold:
            break
    return state, history


def run(obj, w0, cfg, callback=None):
    """Optimize from ``w0``; returns the EMA shadow and the step reports."""
    w0 = as_vector(w0, "w0")
    if len(w0) != obj.dim:
        raise ValueError(f"w0 has dim {len(w0)}, objective expects {obj.dim}")
    state, history = iterate(obj, EEOState.initial(w0, cfg), cfg, callback)
    return state.m, history
