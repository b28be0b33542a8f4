"""Dense linear-algebra kernels for the coding-rate engine.

Everything here runs in 64-bit precision. The factorization, rank-one
update and solves are written out explicitly; ``sym_eigenvalues`` wraps
LAPACK and exists only as a brute-force cross-check in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadShape, NonFinite, NonPositiveDefinite

# Absolute tolerance for the symmetry check on factorization inputs.
SYM_TOL = 1e-12


def _as_float_matrix(m: np.ndarray) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise BadShape(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NonFinite("matrix contains NaN or Inf")
    return a


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L @ L.T equal to the source matrix.

    ``logdet`` caches log det of the factored matrix (2 * sum(log diag L)).
    Instances are immutable; updates return new factors.
    """

    lower: np.ndarray
    logdet: float

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def cholesky(m: np.ndarray) -> CholeskyFactor:
    """Factor a symmetric positive-definite matrix.

    The input is symmetrized as (M + M^T)/2 before factoring; asymmetry
    beyond SYM_TOL is rejected. Raises NonPositiveDefinite on a
    nonpositive pivot.
    """
    a = _as_float_matrix(m)
    n, ncols = a.shape
    if n != ncols:
        raise BadShape(f"matrix must be square, got {a.shape}")
    if n > 0 and np.abs(a - a.T).max() > SYM_TOL * max(1.0, np.abs(a).max()):
        raise BadShape("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)

    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if pivot <= 0.0:
            raise NonPositiveDefinite(f"pivot {j} is {pivot:.6e}")
        d = math.sqrt(pivot)
        L[j, j] = d
        if j + 1 < n:
            L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / d
    logdet = 2.0 * float(np.log(np.diag(L)).sum()) if n else 0.0
    return CholeskyFactor(lower=L, logdet=logdet)


def rank_one_update(f: CholeskyFactor, v: np.ndarray, alpha: float) -> CholeskyFactor:
    """Return the factor of L @ L.T + alpha * v v^T for alpha > 0.

    Forward-substitution Cholesky update, O(dim^2). The input factor is
    left untouched.
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    w = np.asarray(v, dtype=np.float64)
    if w.shape != (f.dim,):
        raise BadShape(f"vector length {w.shape} does not match dim {f.dim}")
    if not np.isfinite(w).all():
        raise NonFinite("update vector contains NaN or Inf")

    L = f.lower.copy()
    w = math.sqrt(alpha) * w
    n = f.dim
    for k in range(n):
        Lkk = L[k, k]
        r = math.hypot(Lkk, w[k])
        c = r / Lkk
        s = w[k] / Lkk
        L[k, k] = r
        if k + 1 < n:
            L[k + 1 :, k] = (L[k + 1 :, k] + s * w[k + 1 :]) / c
            w[k + 1 :] = c * w[k + 1 :] - s * L[k + 1 :, k]
    logdet = 2.0 * float(np.log(np.diag(L)).sum()) if n else 0.0
    return CholeskyFactor(lower=L, logdet=logdet)


def solve_triangular(f: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve (L @ L.T) x = b via forward then backward substitution."""
    y = np.asarray(b, dtype=np.float64)
    if y.shape != (f.dim,):
        raise BadShape(f"rhs length {y.shape} does not match dim {f.dim}")
    L = f.lower
    n = f.dim
    x = y.copy()
    for i in range(n):
        x[i] = (x[i] - L[i, :i] @ x[:i]) / L[i, i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - L[i + 1 :, i] @ x[i + 1 :]) / L[i, i]
    return x


def sym_eigenvalues(m: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, ascending. Test oracle only."""
    a = _as_float_matrix(m)
    return np.linalg.eigvalsh(0.5 * (a + a.T))
