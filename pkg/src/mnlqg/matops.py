"""Small dense matrix utilities shared by every analysis module.

Column-stacking vectorization is used throughout the package:
``vectorize(A @ M @ B.T) == kron(B, A) @ vectorize(M)``. The second-moment
propagation algebra only holds under this convention, so callers must go
through these helpers instead of reshaping ad hoc.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "vectorize",
    "matricize",
    "kron",
    "spectral_radius",
    "solve_linear",
    "MAX_CONDITION",
]

# Condition-number ceiling beyond which a linear solve is refused.
MAX_CONDITION = 1e14


def vectorize(m: np.ndarray) -> np.ndarray:
    """Stack the columns of ``m``: entry (i, j) maps to index j*rows + i."""
    return np.asarray(m, dtype=float).reshape(-1, order="F")


def matricize(v: np.ndarray, n: int, m: int) -> np.ndarray:
    """Inverse of :func:`vectorize`: reshape a length-n*m vector to n-by-m."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != n * m:
        raise ValueError(f"expected a vector of length {n * m}, got shape {v.shape}")
    return v.reshape((n, m), order="F")


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product: block (i, j) equals a[i, j] * b."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def spectral_radius(m: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a square real matrix.

    Uses a dense general eigendecomposition; the matrices in this package are
    at most 4n^2 x 4n^2, where dense is entirely adequate. Raises
    ``numpy.linalg.LinAlgError`` if the eigenvalue iteration fails.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix has non-finite entries")
    return float(np.abs(np.linalg.eigvals(m)).max())


def solve_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` by LU factorization (never an explicit inverse).

    Refuses systems whose condition number exceeds ``MAX_CONDITION``, since a
    solution computed there carries no usable accuracy.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"shape mismatch: matrix {a.shape}, rhs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("non-finite entries in linear system")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise np.linalg.LinAlgError(
            f"matrix is singular to working precision (condition estimate {cond:.3e})"
        )
    return np.linalg.solve(a, b)
