"""The equilibrium layer and its fixed-point solvers.

The layer is the map z -> act(B z + C x + b). With a component-wise
non-expansive activation and ``inf_norm(B) <= kappa < 1`` the map is a
contraction in the infinity norm, so plain iteration converges geometrically
and Anderson mixing usually converges much faster. Residuals are measured as
``max|act(Bz + Cx + b) - z|`` at the returned iterate, so a converged result
is its own certificate.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import activations, kernels
from .errors import DimensionError, NumericError
from .tensor import as_matrix, as_vector

__all__ = [
    "DeqParams",
    "SolverSettings",
    "FixedPointResult",
    "activation_apply",
    "activation_derivative",
    "apply_g",
    "solve_plain",
    "solve_anderson",
    "solve_fixed_point",
]

_METHODS = {"plain": 0, "anderson": 1}


@dataclass
class DeqParams:
    """Parameters of the implicit layer: square recurrence B, input map C,
    bias b, and the activation name."""

    B: np.ndarray
    C: np.ndarray
    b: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.B = as_matrix(self.B)
        self.C = as_matrix(self.C)
        self.b = as_vector(self.b)
        d1 = self.B.shape[0]
        if self.B.shape[1] != d1:
            raise DimensionError(f"B must be square, got {self.B.shape}")
        if self.C.shape[0] != d1 or self.b.shape[0] != d1:
            raise DimensionError(
                f"inconsistent shapes: B {self.B.shape}, C {self.C.shape}, b {self.b.shape}"
            )
        if self.activation not in activations.ACT_IDS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def state_dim(self) -> int:
        return self.B.shape[0]

    @property
    def input_dim(self) -> int:
        return self.C.shape[1]

    def copy(self) -> "DeqParams":
        return DeqParams(self.B.copy(), self.C.copy(), self.b.copy(), self.activation)


@dataclass
class SolverSettings:
    """Fixed-point solver knobs.

    ``tol`` bounds the infinity-norm residual at exit; ``history_m`` is the
    Anderson window; ``damping`` mixes the accelerated step with the previous
    iterate (1.0 = undamped); ``ls_regularization`` stabilizes the window
    least-squares problem. ``adjoint_method`` selects the backward linear
    solver ('fixed_point' or 'cg_normal').
    """

    method: str = "anderson"
    max_iters: int = 200
    tol: float = 1e-6
    history_m: int = 5
    damping: float = 1.0
    ls_regularization: float = 1e-10
    adjoint_method: str = "fixed_point"

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.method == "anderson" and self.history_m < 1:
            raise ValueError("history_m must be >= 1 for anderson")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must be in (0, 1]")
        if self.adjoint_method not in ("fixed_point", "cg_normal"):
            raise ValueError(f"unknown adjoint method {self.adjoint_method!r}")

    def with_(self, **kw) -> "SolverSettings":
        return replace(self, **kw)


@dataclass
class FixedPointResult:
    z_star: np.ndarray
    iterations: int
    residual: float
    converged: bool


def activation_apply(kind: str, u: np.ndarray) -> np.ndarray:
    return activations.apply(kind, u)


def activation_derivative(kind: str, u: np.ndarray) -> np.ndarray:
    return activations.derivative(kind, u)


def apply_g(params: DeqParams, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One application of the layer map: act(B z + C x + b)."""
    z = as_vector(z)
    x = as_vector(x)
    if z.shape[0] != params.state_dim:
        raise DimensionError(f"z has length {z.shape[0]}, expected {params.state_dim}")
    if x.shape[0] != params.input_dim:
        raise DimensionError(f"x has length {x.shape[0]}, expected {params.input_dim}")
    return activations.apply(params.activation, params.B @ z + params.C @ x + params.b)


def preactivation(params: DeqParams, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """B z + C x + b (the argument of the activation)."""
    return params.B @ z + params.C @ x + params.b


def _solve(params, x, z0, settings, method):
    x = as_vector(x)
    if x.shape[0] != params.input_dim:
        raise DimensionError(f"x has length {x.shape[0]}, expected {params.input_dim}")
    if z0 is None:
        z0 = np.zeros(params.state_dim)
    else:
        z0 = as_vector(z0)
        if z0.shape[0] != params.state_dim:
            raise DimensionError(f"z0 has length {z0.shape[0]}, expected {params.state_dim}")
    cxb = params.C @ x + params.b
    z, iters, res, status = kernels.fp_solve(
        params.B,
        np.ascontiguousarray(cxb),
        z0,
        activations.ACT_IDS[params.activation],
        _METHODS[method],
        settings.max_iters,
        settings.tol,
        settings.history_m if method == "anderson" else 1,
        settings.damping,
        settings.ls_regularization,
    )
    if status == kernels.NOT_FINITE:
        raise NumericError("fixed-point iteration produced NaN/Inf")
    return FixedPointResult(np.asarray(z), int(iters), float(res), status == kernels.OK)


def solve_plain(params: DeqParams, x, z0=None, settings: SolverSettings = None) -> FixedPointResult:
    """Plain fixed-point iteration z <- g(z; x)."""
    return _solve(params, x, z0, settings or SolverSettings(method="plain"), "plain")


def solve_anderson(params: DeqParams, x, z0=None, settings: SolverSettings = None) -> FixedPointResult:
    """Anderson-accelerated iteration; finds a fixed point of the same map."""
    return _solve(params, x, z0, settings or SolverSettings(), "anderson")


def solve_fixed_point(params: DeqParams, x, z0=None, settings: SolverSettings = None) -> FixedPointResult:
    """Solve with the method named in ``settings.method``."""
    settings = settings or SolverSettings()
    return _solve(params, x, z0, settings, settings.method)
