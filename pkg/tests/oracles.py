"""Independent reference implementations used only by the tests."""
import math

import numpy as np


def naive_matmul(A, B):
    n, k = len(A), len(B)
    m = len(B[0])
    C = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += A[i][t] * B[t][j]
            C[i][j] = s
    return np.array(C)


def jacobi_eigvals(S, tol=1e-14, max_sweeps=100):
    """Classical two-sided Jacobi eigenvalues of a symmetric matrix."""
    S = np.array(S, dtype=np.float64)
    n = len(S)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(S[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tol * max(1.0, np.abs(S).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if S[p, q] == 0.0:
                    continue
                theta = (S[q, q] - S[p, p]) / (2.0 * S[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                R = np.eye(n)
                R[p, p] = R[q, q] = c
                R[p, q], R[q, p] = s, -s
                S = R.T @ S @ R
    return np.sort(np.diag(S))[::-1]


def gram_singular_values(M):
    M = np.asarray(M, dtype=np.float64)
    G = M.T @ M if M.shape[0] >= M.shape[1] else M @ M.T
    return np.sqrt(np.clip(jacobi_eigvals(G), 0.0, None))


def entropy_rank(sigmas):
    total = sum(sigmas)
    h = -sum(s / total * math.log(s / total) for s in sigmas if s > 0)
    return math.exp(h)
