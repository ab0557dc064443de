"""Component-wise activations and their derivatives.

Every activation here is 1-Lipschitz on scalars and acts coordinate-wise,
which (together with the infinity-norm bound on the recurrent matrix) is
what makes the equilibrium map a contraction. Derivatives lie in [0, 1];
the relu derivative at 0 is taken to be 0.
"""

import numpy as np

__all__ = ["ACTIVATIONS", "ACT_IDS", "apply", "derivative"]

ACTIVATIONS = ("tanh", "sigmoid", "relu", "softplus")

# integer codes shared with the compiled kernels
ACT_IDS = {name: i for i, name in enumerate(ACTIVATIONS)}


def _sigmoid(u):
    # piecewise form avoids overflow in exp for large |u|
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(u):
    # log(1 + e^u) = max(u, 0) + log1p(e^{-|u|})
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


def apply(kind: str, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if kind == "tanh":
        return np.tanh(u)
    if kind == "sigmoid":
        return _sigmoid(u)
    if kind == "relu":
        return np.maximum(u, 0.0)
    if kind == "softplus":
        return _softplus(u)
    raise ValueError(f"unknown activation {kind!r}")


def derivative(kind: str, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if kind == "tanh":
        t = np.tanh(u)
        return 1.0 - t * t
    if kind == "sigmoid":
        s = _sigmoid(u)
        return s * (1.0 - s)
    if kind == "relu":
        return (u > 0.0).astype(np.float64)
    if kind == "softplus":
        return _sigmoid(u)
    raise ValueError(f"unknown activation {kind!r}")
