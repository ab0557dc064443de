"""Backward pass through the equilibrium layer.

Writing pre = B z* + C x + b and D = diag(act'(pre)), the Jacobian of the
layer map at the fixed point is D B. The loss gradient with respect to the
layer parameters needs u = y (I - D B)^{-1} for y = dL/dz*, obtained here by
iterating the linear system u <- u (D B) + y (guaranteed convergent under the
projection-enforced contraction) or, optionally, by conjugate gradient on the
normal equations. Jacobian-free mode skips the solve entirely and uses
u = y, the zeroth-order truncation of the Neumann series for the inverse.
"""

from dataclasses import dataclass

import numpy as np

from . import activations, kernels
from .errors import DimensionError, NumericError
from .solver import DeqParams, SolverSettings, preactivation
from .tensor import as_vector

__all__ = [
    "DeqGrads",
    "BACKWARD_MODES",
    "vjp_g_z",
    "solve_adjoint",
    "grad_theta",
    "finite_diff_grad",
]

BACKWARD_MODES = ("exact_ift", "jfb")


@dataclass
class DeqGrads:
    """Gradient blocks matching DeqParams shapes."""

    dB: np.ndarray
    dC: np.ndarray
    db: np.ndarray

    @staticmethod
    def zeros_like(params: DeqParams) -> "DeqGrads":
        return DeqGrads(
            np.zeros_like(params.B), np.zeros_like(params.C), np.zeros_like(params.b)
        )

    def scaled(self, a: float) -> "DeqGrads":
        return DeqGrads(self.dB * a, self.dC * a, self.db * a)

    def add_(self, other: "DeqGrads") -> "DeqGrads":
        self.dB += other.dB
        self.dC += other.dC
        self.db += other.db
        return self


def vjp_g_z(params: DeqParams, z_star, x, u) -> np.ndarray:
    """u^T (D B), i.e. B^T (u * act'(pre)) for pre = B z* + C x + b."""
    u = as_vector(u)
    if u.shape[0] != params.state_dim:
        raise DimensionError(f"u has length {u.shape[0]}, expected {params.state_dim}")
    pre = preactivation(params, as_vector(z_star), as_vector(x))
    dphi = activations.derivative(params.activation, pre)
    return params.B.T @ (u * dphi)


def solve_adjoint(params: DeqParams, z_star, x, y, settings: SolverSettings = None) -> np.ndarray:
    """Solve u = u (D B) + y; the returned u satisfies the system within tol."""
    settings = settings or SolverSettings()
    y = as_vector(y)
    if y.shape[0] != params.state_dim:
        raise DimensionError(f"y has length {y.shape[0]}, expected {params.state_dim}")
    pre = preactivation(params, as_vector(z_star), as_vector(x))
    dphi = activations.derivative(params.activation, pre)

    if settings.adjoint_method == "cg_normal":
        return _cg_normal(params.B, dphi, y, settings)

    u, _iters, res, status = kernels.adjoint_solve(
        params.B, np.ascontiguousarray(dphi), y, settings.max_iters, settings.tol
    )
    if status == kernels.NOT_FINITE:
        raise NumericError("adjoint iteration produced NaN/Inf")
    if status != kernels.OK:
        raise NumericError(
            f"adjoint solve did not converge: residual {res:.3e} > tol {settings.tol:.3e}"
        )
    return np.asarray(u)


def _cg_normal(B, dphi, y, settings):
    # CG on A^T A u = A^T y with A u = u - B^T (dphi * u); A is nonsymmetric,
    # the normal equations make it SPD.
    def A(v):
        return v - B.T @ (dphi * v)

    def At(v):
        return v - dphi * (B @ v)

    u = y.copy()
    r = At(y - A(u))
    p = r.copy()
    rs = r @ r
    max_iters = max(settings.max_iters, 10 * y.shape[0])
    for _ in range(max_iters):
        if np.abs(A(u) - y).max() <= settings.tol:
            return u
        Ap = At(A(p))
        alpha = rs / (p @ Ap)
        u = u + alpha * p
        r = r - alpha * Ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    res = float(np.abs(A(u) - y).max())
    if res <= settings.tol:
        return u
    raise NumericError(f"adjoint CG did not converge: residual {res:.3e} > tol {settings.tol:.3e}")


def grad_theta(
    params: DeqParams, z_star, x, dL_dz, mode: str = "exact_ift", settings: SolverSettings = None
) -> DeqGrads:
    """Loss gradient w.r.t. (B, C, b) given dL/dz* at a converged fixed point."""
    if mode not in BACKWARD_MODES:
        raise ValueError(f"unknown backward mode {mode!r}")
    settings = settings or SolverSettings()
    z_star = as_vector(z_star)
    x = as_vector(x)
    dL_dz = as_vector(dL_dz)
    if mode == "exact_ift":
        u = solve_adjoint(params, z_star, x, dL_dz, settings)
    else:
        u = dL_dz
    pre = preactivation(params, z_star, x)
    s = u * activations.derivative(params.activation, pre)
    return DeqGrads(dB=np.outer(s, z_star), dC=np.outer(s, x), db=s)


def finite_diff_grad(loss_fn, params: DeqParams, eps: float = 1e-5) -> DeqGrads:
    """Central-difference gradient of a scalar function of DeqParams.

    The loss function is responsible for re-solving its fixed point at a
    tolerance tight enough for the requested eps.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def d_entry(block, idx):
        p_plus = params.copy()
        getattr(p_plus, block)[idx] += eps
        p_minus = params.copy()
        getattr(p_minus, block)[idx] -= eps
        return (loss_fn(p_plus) - loss_fn(p_minus)) / (2.0 * eps)

    g = DeqGrads.zeros_like(params)
    for idx in np.ndindex(params.B.shape):
        g.dB[idx] = d_entry("B", idx)
    for idx in np.ndindex(params.C.shape):
        g.dC[idx] = d_entry("C", idx)
    for i in range(params.b.shape[0]):
        g.db[i] = d_entry("b", (i,))
    return g
