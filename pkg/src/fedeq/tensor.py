"""Dense float64 linear-algebra primitives.

Matrices are 2-D row-major numpy arrays, vectors 1-D arrays; every kernel
validates shapes and keeps entries finite. Problem sizes are small (a few
hundred at most), so plain contiguous float64 storage is all we need.
"""

import numpy as np

from .errors import DimensionError

__all__ = [
    "as_matrix",
    "as_vector",
    "matvec",
    "matvec_t",
    "inf_norm",
    "frobenius_dist",
    "check_finite",
]


def as_matrix(data) -> np.ndarray:
    """Coerce to a C-contiguous float64 matrix."""
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def as_vector(data) -> np.ndarray:
    """Coerce to a contiguous float64 vector."""
    v = np.ascontiguousarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got ndim={v.ndim}")
    return v


def check_finite(a: np.ndarray, what: str = "array") -> np.ndarray:
    from .errors import NumericError

    if not np.isfinite(a).all():
        raise NumericError(f"{what} contains NaN/Inf")
    return a


def matvec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """A @ x with shape validation."""
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec: {a.shape} with {x.shape}")
    return a @ x


def matvec_t(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """A.T @ y with shape validation (the adjoint of :func:`matvec`)."""
    if a.ndim != 2 or y.ndim != 1 or a.shape[0] != y.shape[0]:
        raise DimensionError(f"matvec_t: {a.shape} with {y.shape}")
    return a.T @ y


def inf_norm(a: np.ndarray) -> float:
    """Induced infinity norm: the maximum absolute row sum."""
    if a.size == 0:
        return 0.0
    return float(np.abs(a).sum(axis=1).max())


def frobenius_dist(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius distance between two equal-shape matrices."""
    if a.shape != b.shape:
        raise DimensionError(f"frobenius_dist: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))
