"""Dense linear algebra used by the optimizer, model and diagnostics.

Matrices are plain 2-D ``float64`` numpy arrays (row-major). The singular
value routine is a one-sided Jacobi implementation; products go through
numpy.
"""
from dataclasses import dataclass
import csv
import io

import numpy as np

from . import rng
from .errors import ConvergenceError, DegenerateInputError, NumericError, ShapeError

MAX_SWEEPS = 30
MAX_DIM = 512


def as_matrix(M, name="matrix"):
    """Validate and return ``M`` as a finite 2-D float64 array."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError(f"{name} contains non-finite entries")
    return M


@dataclass(frozen=True)
class SingularSpectrum:
    values: np.ndarray
    source_shape: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or len(v) != min(self.source_shape):
            raise ShapeError(
                f"spectrum of a {self.source_shape} matrix must have {min(self.source_shape)} values"
            )
        if np.any(v < 0) or np.any(np.diff(v) > 0):
            raise ValueError("singular values must be non-negative and sorted descending")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def to_csv(self):
        """Serialize as ``index,sigma`` CSV text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "sigma"])
        for i, s in enumerate(self.values):
            w.writerow([i, repr(float(s))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, source_shape=None):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["index", "sigma"]:
            raise ValueError("spectrum CSV must start with header 'index,sigma'")
        values = [float(r[1]) for r in rows[1:] if r]
        if source_shape is None:
            source_shape = (len(values), len(values))
        return cls(np.array(values), tuple(source_shape))


def matmul(A, B):
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"cannot multiply {A.shape[0]}x{A.shape[1]} by {B.shape[0]}x{B.shape[1]}")
    C = A @ B
    if not np.all(np.isfinite(C)):
        raise NumericError("matmul overflowed")
    return C


def softmax_rows(M):
    """Row-wise softmax with per-row max subtraction.

    Works on any array whose last axis indexes the columns, so batches of
    score matrices are accepted too.
    """
    M = np.asarray(M, dtype=np.float64)
    E = np.exp(M - M.max(axis=-1, keepdims=True))
    return E / E.sum(axis=-1, keepdims=True)


def _jacobi_columns(G, tol=1e-15):
    """Orthogonalize the columns of ``G`` in place by one-sided Jacobi rotations.

    Sweeps use round-robin (tournament) ordering so every round rotates
    n/2 disjoint column pairs at once; each sweep still visits every pair.
    Returns the number of sweeps used.
    """
    n = G.shape[1]
    if n < 2:
        return 0
    # columns at rounding level are numerically zero; rotating them never settles
    negligible = (G.shape[0] * np.finfo(np.float64).eps) ** 2 * np.sum(G * G)
    players = list(range(n)) if n % 2 == 0 else list(range(n)) + [-1]
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]

    for sweep in range(1, MAX_SWEEPS + 1):
        rotated = False
        for p, q in rounds:
            gp = G[:, p]
            gq = G[:, q]
            alpha = np.einsum("ij,ij->j", gp, gp)
            beta = np.einsum("ij,ij->j", gq, gq)
            gamma = np.einsum("ij,ij->j", gp, gq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (np.minimum(alpha, beta) > negligible)
            if not np.any(active):
                continue
            rotated = True
            p, q = p[active], q[active]
            gp, gq = gp[:, active], gq[:, active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            t[zeta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            G[:, p] = c * gp - s * gq
            G[:, q] = s * gp + c * gq
        if not rotated:
            return sweep
    return MAX_SWEEPS + 1


def _off_diagonal_residual(G):
    gram = G.T @ G
    norms = np.sqrt(np.outer(np.diag(gram), np.diag(gram)))
    off = np.abs(gram - np.diag(np.diag(gram)))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(norms > 0, off / norms, 0.0)
    return float(np.sqrt(np.sum(off**2))), float(rel.max(initial=0.0))


def singular_values(M):
    M = as_matrix(M)
    if min(M.shape) > MAX_DIM:
        raise ShapeError(f"singular_values supports min(rows, cols) <= {MAX_DIM}, got {M.shape}")
    G = M.copy() if M.shape[0] >= M.shape[1] else M.T.copy()
    sweeps = _jacobi_columns(G)
    if sweeps > MAX_SWEEPS:
        resid, rel = _off_diagonal_residual(G)
        if rel > 1e-12:
            raise ConvergenceError(
                f"one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps "
                f"(off-diagonal norm {resid:.3e})",
                residual=resid,
            )
    sigma = np.sqrt(np.einsum("ij,ij->j", G, G))
    return SingularSpectrum(np.sort(sigma)[::-1].copy(), M.shape)


def nuclear_norm(M):
    return float(np.sum(singular_values(M).values))


def spectral_norm(M):
    return float(singular_values(M).values[0])


def frobenius_norm(M):
    M = as_matrix(M)
    return float(np.sqrt(np.sum(M * M)))


def effective_rank(spectrum):
    """Exponential of the Shannon entropy of the normalized singular values."""
    values = spectrum.values if isinstance(spectrum, SingularSpectrum) else np.asarray(spectrum, float)
    total = values.sum()
    if not total > 0:
        raise DegenerateInputError("effective rank of an all-zero spectrum is undefined")
    p = values[values > 0] / total
    if np.all(p == p[0]):
        return float(len(p))
    erank = float(np.exp(-np.sum(p * np.log(p))))
    # clamp rounding at the ends of the admissible range
    return min(max(erank, 1.0), float(len(values)))


def power_iteration(apply, dim, iters, seed):
    """Dominant eigenpair of a linear operator by repeated application.

    Returns ``(lam, v)`` with ``v`` a unit vector and ``lam`` its Rayleigh
    quotient.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    gen = rng.generator(seed, rng.PROBE)

    def probe(x):
        Ax = np.asarray(apply(x), dtype=np.float64)
        if not np.isfinite(Ax).all():
            raise NumericError("operator returned a non-finite vector")
        return Ax

    v = gen.standard_normal(dim)
    v /= np.linalg.norm(v)
    Av = probe(v)
    lam = float(v @ Av)
    if lam == 0.0:
        # measure-zero tie: redraw the start vector once
        v = gen.standard_normal(dim)
        v /= np.linalg.norm(v)
        Av = probe(v)
        lam = float(v @ Av)
    for _ in range(iters - 1):
        norm = np.sqrt(Av @ Av)
        if norm == 0.0:
            # v is in the null space, so it is already an eigenvector
            break
        v_next = Av / norm
        if np.array_equal(v_next, v):
            # exact fixed point: further iterations are bit-identical
            break
        v = v_next
        Av = probe(v)
        lam = float(v @ Av)
    return lam, v
