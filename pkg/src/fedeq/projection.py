"""Infinity-norm projection of the recurrent weight matrix.

Minimizing ||A - B||_F subject to inf_norm(A) <= kappa separates across
rows: each row is projected onto the l1 ball of radius kappa. Feasible rows
pass through unchanged; infeasible rows are soft-thresholded at the level
gamma solving sum_m max(|v_m| - gamma, 0) = kappa, found by bisection on
[0, max_m |v_m|] (the objective is continuous and strictly decreasing there,
with opposite signs at the endpoints).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError
from .tensor import as_matrix, as_vector

__all__ = ["ProjectionSettings", "project_l1_row", "project_inf_matrix"]


@dataclass
class ProjectionSettings:
    kappa: float = 0.95
    bisect_tol: float = 1e-12
    max_bisect_iters: int = 200

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if self.bisect_tol <= 0:
            raise ValueError("bisect_tol must be positive")


def project_l1_row(v, kappa: float, settings: ProjectionSettings = None) -> np.ndarray:
    """Euclidean projection of a vector onto the l1 ball of radius kappa."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    settings = settings or ProjectionSettings()
    v = as_vector(v)
    out, status = kernels.project_l1(v, kappa, settings.bisect_tol, settings.max_bisect_iters)
    if status != kernels.OK:
        raise NumericError(
            f"l1 projection bisection did not reach tol {settings.bisect_tol} "
            f"within {settings.max_bisect_iters} iterations"
        )
    return np.asarray(out)


def project_inf_matrix(B, settings: ProjectionSettings = None) -> np.ndarray:
    """Row-wise projection of a square matrix onto inf_norm(B) <= kappa."""
    settings = settings or ProjectionSettings()
    B = as_matrix(B)
    if B.shape[0] != B.shape[1]:
        raise DimensionError(f"expected a square matrix, got {B.shape}")
    out, status = kernels.project_rows(
        B, settings.kappa, settings.bisect_tol, settings.max_bisect_iters
    )
    if status != kernels.OK:
        raise NumericError("l1 projection bisection failed on at least one row")
    return np.asarray(out)
