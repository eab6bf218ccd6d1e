"""Toy channel-attention Transformer.

Each layer computes ``f(Z) = [Z + A(Z) Z W_v] W_o`` with
``A(Z) = softmax(Z W_q (Z W_k)^T / sqrt(d_m))``. No MLP block, no
normalization, single head. Gradients are derived by hand and batched over
windows with batched matmuls.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import rng
from .errors import ShapeError, ValidationError
from .linalg import as_matrix, softmax_rows
from .objective import Objective


@dataclass(frozen=True)
class ModelShape:
    D: int  # variables
    L: int  # lookback
    H: int  # horizon
    patch_len: Optional[int] = None  # None: one token per variable
    d: int = 16
    d_m: int = 16
    d_out: int = 16
    layers: int = 1
    img_channels: Optional[int] = None
    img_patch: Optional[int] = None

    def __post_init__(self):
        if self.patch_len is None:
            object.__setattr__(self, "patch_len", self.L)
        if min(self.D, self.L, self.H, self.d, self.d_m, self.d_out) < 1:
            raise ValidationError("model dimensions must be positive")
        if self.L % self.patch_len:
            raise ShapeError(
                f"lookback {self.L} is not divisible by patch_len {self.patch_len}; left-pad the series"
            )
        if not 1 <= self.layers <= 4:
            raise ValidationError("layers must be between 1 and 4")

    @property
    def N(self):
        return self.D * (self.L // self.patch_len)


@dataclass
class AttentionLayer:
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray


@dataclass
class ModelParams:
    phi_ts: np.ndarray
    layers: List[AttentionLayer]
    head: np.ndarray
    phi_img: Optional[np.ndarray] = None

    # single-layer accessors
    @property
    def W_q(self):
        return self.layers[0].W_q

    @property
    def W_k(self):
        return self.layers[0].W_k

    @property
    def W_v(self):
        return self.layers[0].W_v

    @property
    def W_o(self):
        return self.layers[-1].W_o

    def arrays(self):
        out = [self.phi_ts]
        if self.phi_img is not None:
            out.append(self.phi_img)
        for layer in self.layers:
            out += [layer.W_q, layer.W_k, layer.W_v, layer.W_o]
        out.append(self.head)
        return out


def param_shapes(shape):
    """Ordered list of array shapes making up :class:`ModelParams`."""
    shapes = [(shape.patch_len, shape.d)]
    if shape.img_channels is not None:
        shapes.append((shape.img_channels * shape.img_patch**2, shape.d))
    for i in range(shape.layers):
        out = shape.d_out if i == shape.layers - 1 else shape.d
        shapes += [(shape.d, shape.d_m), (shape.d, shape.d_m), (shape.d, shape.d), (shape.d, out)]
    shapes.append((shape.N * shape.d_out, shape.D * shape.H))
    return shapes


def n_params(shape):
    return sum(r * c for r, c in param_shapes(shape))


def flatten(params):
    return np.concatenate([a.reshape(-1) for a in params.arrays()])


def unflatten(vec, shape):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (n_params(shape),):
        raise ShapeError(f"expected {n_params(shape)} parameters, got {vec.shape}")
    arrays = []
    pos = 0
    for r, c in param_shapes(shape):
        arrays.append(vec[pos : pos + r * c].reshape(r, c))
        pos += r * c
    phi_ts = arrays.pop(0)
    phi_img = arrays.pop(0) if shape.img_channels is not None else None
    layers = [AttentionLayer(*arrays[4 * i : 4 * i + 4]) for i in range(shape.layers)]
    return ModelParams(phi_ts, layers, arrays[-1], phi_img)


def init_params(shape, seed):
    """i.i.d. uniform(-1/sqrt(d), 1/sqrt(d)) for every weight."""
    gen = rng.generator(seed, rng.INIT)
    bound = 1.0 / np.sqrt(shape.d)
    return unflatten(gen.uniform(-bound, bound, n_params(shape)), shape)


def tokenize_ts(x, patch_len, phi_ts):
    """Split each variable into contiguous patches and project them.

    Tokens are ordered variable-major, then time.
    """
    x = as_matrix(x, "time-series input")
    D, L = x.shape
    if L % patch_len:
        raise ShapeError(f"length {L} is not divisible by patch_len {patch_len}; left-pad the series")
    phi_ts = np.asarray(phi_ts, dtype=np.float64)
    if phi_ts.shape[0] != patch_len:
        raise ShapeError(f"phi_ts must have {patch_len} rows, got {phi_ts.shape}")
    return x.reshape(D * (L // patch_len), patch_len) @ phi_ts


def patch_embed_img(x, patch, phi_img):
    """Row-major non-overlapping patches of a C x H x W image, projected."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"image must be C x H x W, got shape {x.shape}")
    C, H, W = x.shape
    if H % patch or W % patch:
        raise ShapeError(f"image {H}x{W} is not divisible by patch size {patch}")
    blocks = x.reshape(C, H // patch, patch, W // patch, patch).transpose(1, 3, 0, 2, 4)
    flat = blocks.reshape((H // patch) * (W // patch), C * patch * patch)
    phi_img = np.asarray(phi_img, dtype=np.float64)
    if phi_img.shape[0] != flat.shape[1]:
        raise ShapeError(f"phi_img must have {flat.shape[1]} rows, got {phi_img.shape}")
    return flat @ phi_img


def attention_matrix(Z, W_q, W_k, d_m=None):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[-1] != W_q.shape[0] or Z.shape[-1] != W_k.shape[0] or W_q.shape != W_k.shape:
        raise ShapeError(f"incompatible shapes Z {Z.shape}, W_q {W_q.shape}, W_k {W_k.shape}")
    d_m = W_q.shape[1] if d_m is None else d_m
    scores = (Z @ W_q) @ np.swapaxes(Z @ W_k, -1, -2) / np.sqrt(d_m)
    return softmax_rows(scores)


def layer_forward(Z, layer):
    if layer.W_v.shape != (Z.shape[-1], Z.shape[-1]) or layer.W_o.shape[0] != Z.shape[-1]:
        raise ShapeError("W_v must be d x d and W_o must have d rows")
    A = attention_matrix(Z, layer.W_q, layer.W_k)
    return (Z + (A @ Z) @ layer.W_v) @ layer.W_o


def forward(Z, p):
    """Encoder output for tokens ``Z`` (N x d, or batched B x N x d)."""
    layers = p.layers if isinstance(p, ModelParams) else [p]
    for layer in layers:
        Z = layer_forward(Z, layer)
    return Z


def attention_loss(A, A_star):
    A = np.asarray(A, dtype=np.float64)
    A_star = np.asarray(A_star, dtype=np.float64)
    if A.shape != A_star.shape:
        raise ShapeError(f"attention shapes differ: {A.shape} vs {A_star.shape}")
    diff = A - A_star
    return float(0.5 * np.sum(diff * diff))


def mse_mae(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match target {target.shape}")
    err = pred - target
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


# batched forward/backward ---------------------------------------------------


def _patches(X, patch_len):
    B, D, L = X.shape
    return X.reshape(B, D * (L // patch_len), patch_len)


def _wgrad(X, dY):
    """sum_b X[b]^T dY[b] as one matrix product."""
    return X.reshape(-1, X.shape[-1]).T @ dY.reshape(-1, dY.shape[-1])


def _softmax_backward(A, dA):
    return A * (dA - np.sum(dA * A, axis=-1, keepdims=True))


def _layer_fwd_cache(Z, layer):
    scale = 1.0 / np.sqrt(layer.W_q.shape[1])
    Q = Z @ layer.W_q
    K = Z @ layer.W_k
    A = softmax_rows((Q @ K.transpose(0, 2, 1)) * scale)
    P = A @ Z
    R = Z + P @ layer.W_v
    out = R @ layer.W_o
    return out, (Z, Q, K, A, P, R, scale)


def _layer_bwd(dout, layer, cache):
    Z, Q, K, A, P, R, scale = cache
    grads = {}
    grads["W_o"] = _wgrad(R, dout)
    dR = dout @ layer.W_o.T
    dZ = dR.copy()
    grads["W_v"] = _wgrad(P, dR)
    dP = dR @ layer.W_v.T
    dA = dP @ Z.transpose(0, 2, 1)
    dZ += A.transpose(0, 2, 1) @ dP
    dS = _softmax_backward(A, dA) * scale
    dQ = dS @ K
    dK = dS.transpose(0, 2, 1) @ Q
    grads["W_q"] = _wgrad(Z, dQ)
    grads["W_k"] = _wgrad(Z, dK)
    dZ += dQ @ layer.W_q.T + dK @ layer.W_k.T
    return dZ, grads


def predict(params, shape, X):
    """Forecasts for a batch of windows X (B x D x L) -> B x D x H."""
    X = np.asarray(X, dtype=np.float64)
    Z = _patches(X, shape.patch_len) @ params.phi_ts
    for layer in params.layers:
        Z, _ = _layer_fwd_cache(Z, layer)
    return (Z.reshape(len(X), -1) @ params.head).reshape(len(X), shape.D, shape.H)


def representation(params, shape, X):
    """Stacked last-layer outputs ((B*N) x d_out) and mean first-layer attention (N x N)."""
    X = np.asarray(X, dtype=np.float64)
    Z = _patches(X, shape.patch_len) @ params.phi_ts
    A_first = None
    for layer in params.layers:
        Z, cache = _layer_fwd_cache(Z, layer)
        if A_first is None:
            A_first = cache[3]
    return Z.reshape(-1, Z.shape[-1]), A_first.mean(axis=0)


class ForecastObjective(Objective):
    """Mean squared forecast error over windows, as a function of all weights."""

    def __init__(self, X, Y, shape, batch_size=None):
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if X.ndim != 3 or X.shape[1:] != (shape.D, shape.L):
            raise ShapeError(f"inputs must be B x {shape.D} x {shape.L}, got {X.shape}")
        if Y.shape != (len(X), shape.D, shape.H):
            raise ShapeError(f"targets must be {len(X)} x {shape.D} x {shape.H}, got {Y.shape}")
        self.X, self.Y, self.shape = X, Y, shape
        self.dim = n_params(shape)
        self.batch_size = batch_size

    def _data(self, batch):
        if batch is None:
            return self.X, self.Y
        return self.X[batch], self.Y[batch]

    def loss(self, w, batch=None):
        X, Y = self._data(batch)
        pred = predict(unflatten(w, self.shape), self.shape, X)
        return float(np.mean((pred - Y) ** 2))

    def grad(self, w, batch=None):
        X, Y = self._data(batch)
        shape = self.shape
        p = unflatten(w, shape)
        B = len(X)
        Xp = _patches(X, shape.patch_len)
        Z = Xp @ p.phi_ts
        caches = []
        for layer in p.layers:
            Z, cache = _layer_fwd_cache(Z, layer)
            caches.append(cache)
        flat = Z.reshape(B, -1)
        pred = flat @ p.head
        dpred = 2.0 * (pred - Y.reshape(B, -1)) / pred.size
        g_head = flat.T @ dpred
        dZ = (dpred @ p.head.T).reshape(Z.shape)
        layer_grads = []
        for layer, cache in zip(reversed(p.layers), reversed(caches)):
            dZ, g = _layer_bwd(dZ, layer, cache)
            layer_grads.append(g)
        layer_grads.reverse()
        g_phi = _wgrad(Xp, dZ)
        parts = [g_phi]
        if p.phi_img is not None:
            parts.append(np.zeros_like(p.phi_img))
        for g in layer_grads:
            parts += [g["W_q"], g["W_k"], g["W_v"], g["W_o"]]
        parts.append(g_head)
        return np.concatenate([a.reshape(-1) for a in parts])

    def sample_batch(self, seed, step):
        if self.batch_size is None or self.batch_size >= len(self.X):
            return None
        gen = rng.generator(seed, rng.BATCH, step)
        return np.sort(gen.choice(len(self.X), size=self.batch_size, replace=False))


class AttentionAlignObjective(Objective):
    """Mean over windows of 1/2 ||A(Z) - A*(Z)||_F^2 as a function of (W_q, W_k).

    Tokens are fixed; A* comes from a hidden teacher pair so that zero loss is
    attainable. Parameter vector is W_q then W_k, flattened.
    """

    def __init__(self, Z, teacher_q, teacher_k):
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim == 2:
            Z = Z[None]
        self.Z = Z
        self.qk_shape = teacher_q.shape
        self.A_star = attention_matrix(Z, teacher_q, teacher_k)
        self.dim = 2 * teacher_q.size

    def split(self, w):
        n = self.dim // 2
        return w[:n].reshape(self.qk_shape), w[n:].reshape(self.qk_shape)

    def attention(self, w):
        W_q, W_k = self.split(w)
        return attention_matrix(self.Z, W_q, W_k)

    def loss(self, w, batch=None):
        diff = self.attention(w) - self.A_star
        return float(0.5 * np.sum(diff * diff) / len(self.Z))

    def grad(self, w, batch=None):
        W_q, W_k = self.split(w)
        Z = self.Z
        scale = 1.0 / np.sqrt(self.qk_shape[1])
        Q, K = Z @ W_q, Z @ W_k
        A = softmax_rows((Q @ K.transpose(0, 2, 1)) * scale)
        dS = _softmax_backward(A, (A - self.A_star) / len(Z)) * scale
        dQ = dS @ K
        dK = dS.transpose(0, 2, 1) @ Q
        g_q = _wgrad(Z, dQ)
        g_k = _wgrad(Z, dK)
        return np.concatenate([g_q.reshape(-1), g_k.reshape(-1)])


def attention_tokens(X, shape, seed):
    """Fixed tokens for the alignment task, projected with a seeded phi_ts."""
    phi = init_params(shape, seed).phi_ts
    return _patches(np.asarray(X, dtype=np.float64), shape.patch_len) @ phi


def model_objective(X, Y, shape, task, seed=0, batch_size=None, teacher_scale=4.0):
    """Wrap the model as an Objective for ``forecast_mse`` or ``attention_align``.

    Returns ``(objective, w0)`` where ``w0`` is the seeded initial point.
    The alignment teacher is drawn like the student but scaled by
    ``teacher_scale`` so that its attention is far from uniform.
    """
    if task == "forecast_mse":
        obj = ForecastObjective(X, Y, shape, batch_size)
        return obj, flatten(init_params(shape, seed))
    if task == "attention_align":
        Z = attention_tokens(X, shape, seed)
        gen = rng.generator(seed, rng.TEACHER)
        bound = 1.0 / np.sqrt(shape.d)
        teacher_q = gen.uniform(-bound, bound, (shape.d, shape.d_m)) * teacher_scale
        teacher_k = gen.uniform(-bound, bound, (shape.d, shape.d_m)) * teacher_scale
        obj = AttentionAlignObjective(Z, teacher_q, teacher_k)
        p0 = init_params(shape, seed)
        return obj, np.concatenate([p0.W_q.reshape(-1), p0.W_k.reshape(-1)])
    raise ValidationError(f"unknown task {task!r}; expected forecast_mse or attention_align")
