"""Analytic-vs-finite-difference gradient checks for every objective."""
import numpy as np

from .. import rng
from ..model import ModelShape, model_objective
from ..objective import LandscapeSpec, builtin_landscape, fd_grad
from .data import sine_mixture, windows_from_array

TOL = 1e-4


def relative_error(obj, w, batch=None):
    g = obj.grad(w, batch)
    fd = fd_grad(obj, w, batch=batch)
    return float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-300))


def _landscape_cases(seed):
    gen = rng.generator(seed, rng.INIT)
    A = gen.standard_normal((4, 4))
    yield "quadratic", builtin_landscape(LandscapeSpec("quadratic", {"A": A + A.T, "b": gen.standard_normal(4)}, seed))
    for name, params in [("saddle", {}), ("cubic", {"dim": 3}), ("two_well", {}), ("toy_linear", {})]:
        yield name, builtin_landscape(LandscapeSpec(name, params, seed))


def _model_cases(seed):
    ds = windows_from_array(sine_mixture(120, 3, 0.1, seed), 8, 2, stride=4)
    X, Y = ds.train
    for layers, patch in [(1, None), (2, 4)]:
        shape = ModelShape(D=3, L=8, H=2, patch_len=patch, d=6, d_m=5, d_out=4, layers=layers)
        obj, _ = model_objective(X[:8], Y[:8], shape, "forecast_mse", seed)
        yield f"forecast_mse[layers={layers}]", obj
    # the alignment task only sees the first layer's W_q, W_k
    obj, _ = model_objective(X[:8], Y[:8], shape, "attention_align", seed)
    yield "attention_align", obj


def gradient_check_suite(seed=0, n_points=10):
    """Worst relative error per objective at ``n_points`` seeded points.

    Returns a list of ``(name, worst_error)``.
    """
    out = []
    for name, obj in _landscape_cases(seed):
        pts = rng.generator(seed, rng.PROBE).uniform(-1.5, 1.5, (n_points, obj.dim))
        out.append((name, max(relative_error(obj, w) for w in pts)))
    for name, obj in _model_cases(seed):
        pts = rng.generator(seed, rng.PROBE).uniform(-0.5, 0.5, (n_points, obj.dim))
        out.append((name, max(relative_error(obj, w) for w in pts)))
    return out
