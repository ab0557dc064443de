"""Composite predictive model: equilibrium representation + explicit head.

The head is a plain dense stack trained by reverse-mode backprop; the input
gradient it produces at the first layer feeds the implicit backward pass of
the equilibrium layer. All batch reductions are means, accumulated in
ascending sample-id order for determinism.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import activations
from .errors import DimensionError, NumericError
from .implicit_grad import DeqGrads, grad_theta
from .solver import DeqParams, SolverSettings, solve_fixed_point
from .tensor import as_matrix, as_vector

__all__ = [
    "HeadLayer",
    "HeadParams",
    "HeadGrads",
    "Batch",
    "LOSS_KINDS",
    "init_head",
    "head_forward",
    "head_backward",
    "loss_and_grad",
    "predict",
    "full_gradient",
    "FullGradResult",
    "explicit_gradient",
]

LOSS_KINDS = ("softmax_cross_entropy", "mean_squared_error")


@dataclass
class HeadLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Optional[str] = None  # None = linear (typical for the last layer)

    def __post_init__(self):
        self.weight = as_matrix(self.weight)
        self.bias = as_vector(self.bias)
        if self.weight.shape[0] != self.bias.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )
        if self.activation is not None and self.activation not in activations.ACT_IDS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class HeadParams:
    layers: list

    def __post_init__(self):
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.weight.shape[1] != prev.weight.shape[0]:
                raise DimensionError(
                    f"layer dims do not chain: {prev.weight.shape} -> {cur.weight.shape}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def copy(self) -> "HeadParams":
        return HeadParams(
            [HeadLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


@dataclass
class HeadGrads:
    """Per-layer (dW, db) pairs matching a HeadParams."""

    layers: list

    @staticmethod
    def zeros_like(w: HeadParams) -> "HeadGrads":
        return HeadGrads([(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in w.layers])

    def scaled(self, a: float) -> "HeadGrads":
        return HeadGrads([(dw * a, db * a) for dw, db in self.layers])

    def add_(self, other: "HeadGrads") -> "HeadGrads":
        for (dw, db), (ow, ob) in zip(self.layers, other.layers):
            dw += ow
            db += ob
        return self


@dataclass
class Batch:
    """Parallel arrays of inputs, integer labels, and global sample ids."""

    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    sample_ids: np.ndarray  # (n,)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        n = self.features.shape[0]
        if self.labels.shape[0] != n or self.sample_ids.shape[0] != n:
            raise DimensionError("features, labels and sample_ids must have equal length")

    def __len__(self) -> int:
        return self.features.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.features[idx], self.labels[idx], self.sample_ids[idx])


def init_head(dims, activation: str, rng: np.random.Generator) -> HeadParams:
    """Dense stack with the given layer widths; hidden layers use
    ``activation``, the final layer is linear. Glorot-uniform weights."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(dims, dims[1:])):
        scale = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-scale, scale, size=(n_out, n_in))
        last = i == len(dims) - 2
        layers.append(HeadLayer(w, np.zeros(n_out), None if last else activation))
    return HeadParams(layers)


def head_forward(w: HeadParams, z: np.ndarray):
    """Forward pass; returns (output, tape) where the tape caches each
    layer's input and pre-activation for the backward pass."""
    a = as_vector(z)
    if a.shape[0] != w.input_dim:
        raise DimensionError(f"input length {a.shape[0]} != head input dim {w.input_dim}")
    tape = []
    for layer in w.layers:
        pre = layer.weight @ a + layer.bias
        tape.append((a, pre))
        a = activations.apply(layer.activation, pre) if layer.activation else pre
    return a, tape


def head_backward(w: HeadParams, tape, dL_dout: np.ndarray):
    """Exact reverse-mode gradients; returns (HeadGrads, dL/dinput)."""
    grad = as_vector(dL_dout)
    layer_grads = [None] * len(w.layers)
    for i in range(len(w.layers) - 1, -1, -1):
        layer = w.layers[i]
        a_in, pre = tape[i]
        if layer.activation:
            delta = grad * activations.derivative(layer.activation, pre)
        else:
            delta = grad
        layer_grads[i] = (np.outer(delta, a_in), delta.copy())
        grad = layer.weight.T @ delta
    return HeadGrads(layer_grads), grad


def loss_and_grad(kind: str, output: np.ndarray, label: int):
    """Scalar loss and its gradient w.r.t. the head output."""
    output = as_vector(output)
    label = int(label)
    if not 0 <= label < output.shape[0]:
        raise ValueError(f"label {label} out of range for {output.shape[0]} outputs")
    if kind == "softmax_cross_entropy":
        m = output.max()
        ex = np.exp(output - m)
        p = ex / ex.sum()
        loss = float(np.log(ex.sum()) + m - output[label])
        g = p.copy()
        g[label] -= 1.0
        return loss, g
    if kind == "mean_squared_error":
        t = np.zeros_like(output)
        t[label] = 1.0
        diff = output - t
        k = output.shape[0]
        return float((diff @ diff) / k), 2.0 * diff / k
    raise ValueError(f"unknown loss kind {kind!r}")


def predict(theta: DeqParams, w: HeadParams, x, settings: SolverSettings = None, z0=None):
    """Class prediction: argmax of the head over the equilibrium state.

    Returns (class index, z_star); ties break toward the lowest index.
    Raises NumericError if the fixed point is not found.
    """
    settings = settings or SolverSettings()
    res = solve_fixed_point(theta, x, z0, settings)
    if not res.converged:
        raise NumericError(
            f"fixed point not found: residual {res.residual:.3e} > tol {settings.tol:.3e}"
        )
    out, _ = head_forward(w, res.z_star)
    return int(np.argmax(out)), res.z_star


@dataclass
class FullGradResult:
    gtheta: DeqGrads
    gw: HeadGrads
    mean_loss: float
    fp_iterations: int = 0
    fp_solves: int = 0
    fp_failures: int = 0


def full_gradient(
    theta: DeqParams,
    w: HeadParams,
    batch: Batch,
    loss_kind: str = "softmax_cross_entropy",
    backward_mode: str = "exact_ift",
    settings: SolverSettings = None,
    warm_cache: Optional[dict] = None,
) -> FullGradResult:
    """Mean loss and mean gradients over a batch.

    Each sample's fixed point is solved (warm-started from the cache when a
    previous solution exists), the head is backpropagated, and the resulting
    dL/dz* drives the implicit backward pass. The cache is updated in place
    with each sample's solution keyed by its global id. Samples are processed
    in ascending sample-id order. Unstable configurations are tolerated so
    they can be studied: non-converged solves are counted and used as-is,
    and a solve that blows up to NaN is counted as a failure and contributes
    nothing to the gradient (its loss is recorded as infinite).
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    settings = settings or SolverSettings()
    gtheta = DeqGrads.zeros_like(theta)
    gw = HeadGrads.zeros_like(w)
    total_loss = 0.0
    iters = 0
    failures = 0

    order = np.argsort(batch.sample_ids, kind="stable")
    for j in order:
        x = batch.features[j]
        sid = int(batch.sample_ids[j])
        z0 = warm_cache.get(sid) if warm_cache is not None else None
        try:
            res = solve_fixed_point(theta, x, z0, settings)
        except NumericError:
            failures += 1
            total_loss += float("inf")
            continue
        iters += res.iterations
        if not res.converged:
            failures += 1
        out, tape = head_forward(w, res.z_star)
        loss, dl_dout = loss_and_grad(loss_kind, out, int(batch.labels[j]))
        gw_s, dl_dz = head_backward(w, tape, dl_dout)
        gtheta_s = grad_theta(theta, res.z_star, x, dl_dz, backward_mode, settings)
        gtheta.add_(gtheta_s)
        gw.add_(gw_s)
        total_loss += loss
        if warm_cache is not None:
            warm_cache[sid] = res.z_star
    n = len(batch)
    return FullGradResult(
        gtheta=gtheta.scaled(1.0 / n),
        gw=gw.scaled(1.0 / n),
        mean_loss=total_loss / n,
        fp_iterations=iters,
        fp_solves=len(batch),
        fp_failures=failures,
    )


def explicit_gradient(w: HeadParams, batch: Batch, loss_kind: str = "softmax_cross_entropy"):
    """Mean loss/gradients for a purely explicit dense network (no
    equilibrium layer); used by the explicit-model baseline."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    gw = HeadGrads.zeros_like(w)
    total_loss = 0.0
    order = np.argsort(batch.sample_ids, kind="stable")
    for j in order:
        out, tape = head_forward(w, batch.features[j])
        loss, dl_dout = loss_and_grad(loss_kind, out, int(batch.labels[j]))
        gw_s, _ = head_backward(w, tape, dl_dout)
        gw.add_(gw_s)
        total_loss += loss
    n = len(batch)
    return gw.scaled(1.0 / n), total_loss / n
