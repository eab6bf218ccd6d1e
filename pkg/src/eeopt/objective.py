"""Differentiable objectives, finite-difference oracles and synthetic landscapes.

Parameter vectors are 1-D float64 numpy arrays. An :class:`Objective`
exposes ``loss``/``grad`` at a parameter vector and an optional batch
handle; deterministic objectives ignore the handle.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import rng
from .errors import NumericError, ShapeError, ValidationError


def as_vector(w, name="w"):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise NumericError(f"{name} contains non-finite entries")
    return w


def default_grad_step(w):
    return 1e-5 * (1.0 + np.max(np.abs(w), initial=0.0))


def default_hvp_step(w):
    return 1e-3 * (1.0 + np.max(np.abs(w), initial=0.0))


class Objective:
    """Base class for losses over a flat parameter vector.

    Subclasses implement ``loss`` and ``grad``. Stochastic objectives also
    override ``sample_batch`` so that every evaluation inside one optimizer
    step can share the same batch handle.
    """

    dim = None
    smoothness = None  # L, gradient Lipschitz constant, if known
    hessian_lipschitz = None  # rho_H, if known

    def loss(self, w, batch=None):
        raise NotImplementedError

    def grad(self, w, batch=None):
        raise NotImplementedError

    def hessian(self, w):
        """Analytic Hessian, or None when not available."""
        return None

    def sample_batch(self, seed, step):
        return None


class Quadratic(Objective):
    """L(w) = 1/2 w^T A w + b^T w."""

    def __init__(self, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if A.shape[0] != A.shape[1]:
            raise ValidationError(f"quadratic needs a square matrix, got {A.shape}")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12):
            raise ValidationError("quadratic needs a symmetric matrix")
        if not np.all(np.isfinite(A)):
            raise ValidationError("quadratic matrix has non-finite entries")
        self.A = A
        self.b = np.zeros(len(A)) if b is None else as_vector(b, "b")
        if len(self.b) != len(A):
            raise ValidationError("quadratic: len(b) must match A")
        self.dim = len(A)
        self.smoothness = float(np.max(np.abs(np.linalg.eigvalsh(A))))
        self.hessian_lipschitz = 0.0

    def loss(self, w, batch=None):
        return float(0.5 * w @ self.A @ w + self.b @ w)

    def grad(self, w, batch=None):
        return self.A @ w + self.b

    def hessian(self, w):
        return self.A.copy()


class Saddle(Objective):
    """L(x, y) = x^2 - y^2, strict saddle at the origin."""

    dim = 2
    smoothness = 2.0
    hessian_lipschitz = 0.0

    def loss(self, w, batch=None):
        return float(w[0] ** 2 - w[1] ** 2)

    def grad(self, w, batch=None):
        return np.array([2.0 * w[0], -2.0 * w[1]])

    def hessian(self, w):
        return np.diag([2.0, -2.0])


class Cubic(Objective):
    """L(w) = sum_i w_i^3."""

    hessian_lipschitz = 6.0

    def __init__(self, dim=2):
        if dim < 1:
            raise ValidationError("cubic: dim must be >= 1")
        self.dim = int(dim)

    def loss(self, w, batch=None):
        return float(np.sum(w**3))

    def grad(self, w, batch=None):
        return 3.0 * w**2

    def hessian(self, w):
        return np.diag(6.0 * w)


class TwoWell(Objective):
    """1-D double well with a sharp deep minimum near +1 and a flat one at -1.

    L(x) = (x^2 - 1)^2 - depth * exp(-sharpness * (x - 1)^2)
    """

    dim = 1
    flat_min = -1.0
    sharp_min = 1.0

    def __init__(self, depth=0.3, sharpness=200.0):
        if depth < 0 or sharpness <= 0:
            raise ValidationError("two_well: need depth >= 0 and sharpness > 0")
        self.depth = float(depth)
        self.sharpness = float(sharpness)

    def _bump(self, x):
        return self.depth * math.exp(-self.sharpness * (x - 1.0) ** 2)

    # scalar math: this landscape sits in tight optimizer loops
    def loss(self, w, batch=None):
        x = float(w[0])
        return (x * x - 1.0) ** 2 - self._bump(x)

    def grad(self, w, batch=None):
        x = float(w[0])
        return np.array([4.0 * x * (x * x - 1.0) + 2.0 * self.sharpness * (x - 1.0) * self._bump(x)])

    def hessian(self, w):
        x = float(w[0])
        k = self.sharpness
        bump = 2.0 * k * self._bump(x) * (1.0 - 2.0 * k * (x - 1.0) ** 2)
        return np.array([[12.0 * x * x - 4.0 + bump]])

    def in_flat_well(self, x):
        """Basin membership under gradient flow: the hilltop sits at x = 0."""
        return float(np.asarray(x).reshape(-1)[0]) < 0.0


class ToyLinear(Objective):
    """Least squares on Y = X W_toy + noise, parameters are W flattened (L x H).

    L(W) = ||X W - Y||_F^2 / n, gradient 2 X^T (X W - Y) / n. With
    ``batch_size`` set, ``sample_batch`` returns row indices and the loss is
    averaged over those rows only.
    """

    def __init__(self, n=64, lookback=8, horizon=2, sigma=0.1, seed=0, batch_size=None):
        if sigma < 0:
            raise ValidationError("toy_linear: sigma must be >= 0")
        if min(n, lookback, horizon) < 1:
            raise ValidationError("toy_linear: n, lookback and horizon must be >= 1")
        gen = rng.generator(seed, "toy_linear")
        self.X = gen.standard_normal((n, lookback))
        self.W_toy = gen.standard_normal((lookback, horizon)) / np.sqrt(lookback)
        self.Y = self.X @ self.W_toy + sigma * gen.standard_normal((n, horizon))
        self.shape = (lookback, horizon)
        self.dim = lookback * horizon
        self.sigma = float(sigma)
        self.seed = seed
        self.batch_size = batch_size
        self.smoothness = float(2.0 * np.linalg.eigvalsh(self.X.T @ self.X / n).max())
        self.hessian_lipschitz = 0.0

    def _rows(self, batch):
        if batch is None:
            return self.X, self.Y
        return self.X[batch], self.Y[batch]

    def loss(self, w, batch=None):
        X, Y = self._rows(batch)
        R = X @ w.reshape(self.shape) - Y
        return float(np.sum(R * R) / len(X))

    def grad(self, w, batch=None):
        X, Y = self._rows(batch)
        R = X @ w.reshape(self.shape) - Y
        return (2.0 * X.T @ R / len(X)).reshape(-1)

    def hessian(self, w):
        XtX = 2.0 * self.X.T @ self.X / len(self.X)
        return np.kron(XtX, np.eye(self.shape[1]))

    def sample_batch(self, seed, step):
        if self.batch_size is None or self.batch_size >= len(self.X):
            return None
        gen = rng.generator(seed, rng.BATCH, step)
        return np.sort(gen.choice(len(self.X), size=self.batch_size, replace=False))


LANDSCAPES = ("quadratic", "saddle", "cubic", "two_well", "toy_linear")


@dataclass
class LandscapeSpec:
    name: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.name not in LANDSCAPES:
            raise ValidationError(f"unknown landscape {self.name!r}; expected one of {LANDSCAPES}")


def builtin_landscape(spec):
    p = dict(spec.params)
    if spec.name == "quadratic":
        if "A" in p:
            A = np.asarray(p.pop("A"), dtype=np.float64)
        else:
            A = np.diag(np.asarray(p.pop("diag", [1.0, 10.0]), dtype=np.float64))
        b = p.pop("b", None)
        obj = Quadratic(A, b)
    elif spec.name == "saddle":
        obj = Saddle()
    elif spec.name == "cubic":
        obj = Cubic(int(p.pop("dim", 2)))
    elif spec.name == "two_well":
        obj = TwoWell(depth=p.pop("depth", 0.3), sharpness=p.pop("sharpness", 200.0))
    else:
        obj = ToyLinear(
            n=int(p.pop("n", 64)),
            lookback=int(p.pop("lookback", 8)),
            horizon=int(p.pop("horizon", 2)),
            sigma=float(p.pop("sigma", 0.1)),
            seed=spec.seed,
            batch_size=p.pop("batch_size", None),
        )
    if p:
        raise ValidationError(f"{spec.name}: unknown parameters {sorted(p)}")
    return obj


def _checked_loss(obj, w, batch, where):
    val = obj.loss(w, batch)
    if not np.isfinite(val):
        raise NumericError(f"non-finite loss at {where}")
    return val


def fd_grad(obj, w, h=None, batch=None):
    """Central-difference gradient, one coordinate at a time."""
    w = as_vector(w)
    h = default_grad_step(w) if h is None else h
    if h <= 0:
        raise ValueError("h must be positive")
    out = np.empty_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        fp = _checked_loss(obj, w + e, batch, f"coordinate {i} (+h)")
        fm = _checked_loss(obj, w - e, batch, f"coordinate {i} (-h)")
        out[i] = (fp - fm) / (2.0 * h)
    return out


def fd_hvp(obj, w, v, alpha=None, batch=None):
    """Hessian-vector product from central differences of the gradient."""
    w = as_vector(w)
    v = as_vector(v, "v")
    if np.linalg.norm(v) < 1e-12:
        raise ValueError("fd_hvp needs a nonzero direction (||v|| >= 1e-12)")
    alpha = default_hvp_step(w) if alpha is None else alpha
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return central_hvp(obj, w, v, alpha, batch)


def central_hvp(obj, w, v, alpha, batch=None):
    """fd_hvp without argument validation, for inner loops."""
    hv = (obj.grad(w + alpha * v, batch) - obj.grad(w - alpha * v, batch)) / (2.0 * alpha)
    if not np.isfinite(hv).all():
        raise NumericError("non-finite gradient while probing the Hessian")
    return hv


def rayleigh(obj, w, v, alpha=None, batch=None):
    v = as_vector(v, "v")
    return float(v @ fd_hvp(obj, w, v, alpha, batch) / (v @ v))


def robust_directions(obj, w, n_samples, seed, batch=None):
    """Unit directions probed by :func:`robust_objective_estimate`.

    Half are uniform on the sphere; the rest are structured: +-g/||g|| first,
    then signed coordinate axes, topped up with more sphere draws.
    """
    dim = len(w)
    n_random = n_samples // 2
    structured = []
    g = obj.grad(w, batch)
    gn = np.linalg.norm(g)
    if gn > 0:
        structured += [g / gn, -g / gn]
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        structured += [e, -e]
    structured = structured[: n_samples - n_random]
    gen = rng.generator(seed, rng.SPHERE)
    Z = gen.standard_normal((n_samples - len(structured), dim))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return np.vstack([np.array(structured).reshape(-1, dim), Z])


def robust_objective_estimate(obj, w, rho, n_samples, seed, batch=None):
    """Sampled lower estimate of max_{||d|| <= rho} L(w + d)."""
    if rho < 0 or n_samples < 1:
        raise ValueError("need rho >= 0 and n_samples >= 1")
    w = as_vector(w)
    best = obj.loss(w, batch)
    if rho == 0:
        return best
    for u in robust_directions(obj, w, n_samples, seed, batch):
        best = max(best, obj.loss(w + rho * u, batch))
    return best
