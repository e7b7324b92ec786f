"""Dense float64 linear algebra and gradient plumbing.

Cholesky factorization uses an adaptive jitter ladder: near-singular Kzz
matrices are routine once inducing points start to collapse during training,
so factorization retries with increasing diagonal inflation (relative to the
mean diagonal) and reports what it applied. Gradients of scalar losses are
obtained by reverse-mode differentiation through JAX; `gradient` is the one
entry point the rest of the package uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import numpy as np
import scipy.linalg

# Relative jitter ladder: each level multiplies the mean diagonal of the
# matrix being factorized. 0 first so well-conditioned matrices are exact.
JITTER_LEVELS = (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)

# Variances are clamped here after every moment computation; roundoff in
# E[f^2] - E[f]^2 can produce tiny negatives.
VARIANCE_FLOOR = 1e-12


class NotPositiveDefinite(Exception):
    """Factorization failed at the maximum jitter level.

    `pivot` is the index of the first non-positive pivot encountered.
    """

    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix not positive definite (failing pivot {pivot})")


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L @ L.T = A + jitter*I."""

    L: np.ndarray
    jitter: float


def _failing_pivot(a: np.ndarray) -> int:
    """Locate the first non-positive pivot of an unpivoted Cholesky sweep."""
    a = a.copy()
    n = a.shape[0]
    for j in range(n):
        d = a[j, j] - np.dot(a[j, :j], a[j, :j])
        if not d > 0:
            return j
        a[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            a[i, j] = (a[i, j] - np.dot(a[i, :j], a[j, :j])) / a[j, j]
    return n - 1  # numpy failed but the scalar sweep did not; blame the last pivot


def cholesky(a: np.ndarray, levels=JITTER_LEVELS) -> CholeskyFactor:
    """Factor a symmetric matrix, escalating jitter until a pivot survives."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = np.max(np.abs(a))
    if scale > 0 and np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric within 1e-12 relative tolerance")
    a = 0.5 * (a + a.T)
    mean_diag = float(np.mean(np.diag(a)))
    eye = np.eye(a.shape[0])
    for level in levels:
        jitter = level * mean_diag
        try:
            L = np.linalg.cholesky(a + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return CholeskyFactor(L=L, jitter=jitter)
    raise NotPositiveDefinite(_failing_pivot(a + levels[-1] * mean_diag * eye))


def required_jitter_level(a: np.ndarray, levels=JITTER_LEVELS) -> float:
    """Smallest ladder level (relative to mean diagonal) that factors `a`."""
    factor = cholesky(a, levels=levels)
    mean_diag = float(np.mean(np.diag(a)))
    return factor.jitter / mean_diag if mean_diag > 0 else 0.0


def solve_lower(L, b: np.ndarray) -> np.ndarray:
    """Forward substitution: solve L @ x = b for lower-triangular L."""
    mat = L.L if isinstance(L, CholeskyFactor) else np.asarray(L, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    rows = b.shape[0] if b.ndim > 0 else None
    if mat.shape[1] != rows:
        raise ValueError(f"dimension mismatch: L is {mat.shape}, b has {rows} rows")
    return scipy.linalg.solve_triangular(mat, b, lower=True)


def solve_cholesky(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve (L @ L.T) @ x = b given the lower factor."""
    y = solve_lower(factor, b)
    return scipy.linalg.solve_triangular(factor.L.T, y, lower=False)


def gradient(loss_fn, params):
    """Value and per-parameter gradient of a scalar loss.

    `params` is any pytree of arrays/scalars; the returned gradient tree has
    the same structure. Parameters the loss does not touch get exact zeros.
    """
    value, grads = jax.value_and_grad(loss_fn)(params)
    return value, grads


def tree_all_finite(tree) -> bool:
    leaves = jax.tree_util.tree_leaves(tree)
    return all(bool(np.all(np.isfinite(np.asarray(leaf)))) for leaf in leaves)
