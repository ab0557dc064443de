"""Gradient validation harness: implicit gradients vs. finite differences.

Builds seeded random instances of the full composite (equilibrium layer,
dense head, cross-entropy loss on a small batch) and compares the implicit
backward pass against a central-difference oracle. The oracle re-solves the
fixed point with plain iteration at a much tighter tolerance than the path
under test, so the two sides stay independent.
"""

from dataclasses import dataclass

import numpy as np

from .implicit_grad import finite_diff_grad
from .model import Batch, full_gradient, head_forward, init_head, loss_and_grad
from .projection import ProjectionSettings, project_inf_matrix
from .solver import DeqParams, SolverSettings, preactivation, solve_fixed_point
from . import activations

__all__ = ["GradCheckReport", "make_instance", "check_instance", "run_gradcheck"]

# plain iteration, tight tolerance: the oracle's forward solves
_ORACLE = SolverSettings(method="plain", max_iters=20000, tol=1e-13)


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_seed: int
    trials: int


def make_instance(seed: int, d: int, d1: int, kappa: float = 0.9, num_classes: int = 3,
                  batch_n: int = 2, eps: float = 1e-5):
    """Seeded random composite. For the kinked activation the instance is
    regenerated until every pre-activation at the fixed point clears a margin
    wide enough for the finite-difference step, so the oracle stays valid."""
    activation = activations.ACTIVATIONS[seed % len(activations.ACTIVATIONS)]
    rng = np.random.default_rng((seed, 0x6C))
    proj = ProjectionSettings(kappa=kappa)
    for _attempt in range(50):
        B = project_inf_matrix(rng.normal(0.0, 1.0, (d1, d1)), proj)
        C = rng.normal(0.0, 0.5, (d1, d))
        b = rng.normal(0.0, 0.5, d1)
        theta = DeqParams(B, C, b, activation)
        head = init_head([d1, 6, num_classes], "tanh", rng)
        batch = Batch(
            rng.normal(0.0, 1.0, (batch_n, d)),
            rng.integers(0, num_classes, batch_n),
            np.arange(batch_n),
        )
        if activation != "relu":
            return theta, head, batch
        margin = min(
            np.abs(preactivation(theta, solve_fixed_point(theta, x, None, _ORACLE).z_star, x)).min()
            for x in batch.features
        )
        if margin > 100 * eps:
            return theta, head, batch
    raise RuntimeError(f"could not build a margin-safe relu instance for seed {seed}")


def _composite_loss(theta, head, batch, loss_kind="softmax_cross_entropy"):
    total = 0.0
    for x, label in zip(batch.features, batch.labels):
        res = solve_fixed_point(theta, x, None, _ORACLE)
        out, _ = head_forward(head, res.z_star)
        loss, _ = loss_and_grad(loss_kind, out, int(label))
        total += loss
    return total / len(batch)


def check_instance(seed: int, d: int, d1: int, eps: float = 1e-5, mode: str = "exact_ift",
                   forward_tol: float = 1e-10) -> float:
    """Max per-entry relative error (absolute floor 1e-8) between the
    implicit gradient and the finite-difference oracle for one instance."""
    theta, head, batch = make_instance(seed, d, d1, eps=eps)
    settings = SolverSettings(method="anderson", max_iters=2000, tol=forward_tol)
    fg = full_gradient(theta, head, batch, "softmax_cross_entropy", mode, settings)
    fd = finite_diff_grad(lambda p: _composite_loss(p, head, batch), theta, eps)

    worst = 0.0
    for got, exp in ((fg.gtheta.dB, fd.dB), (fg.gtheta.dC, fd.dC), (fg.gtheta.db, fd.db)):
        diff = np.abs(got - exp)
        mask = diff > 1e-8
        if mask.any():
            worst = max(worst, float((diff[mask] / np.abs(exp[mask])).max()))
    return worst


def run_gradcheck(d: int = 3, d1: int = 4, trials: int = 100, eps: float = 1e-5,
                  mode: str = "exact_ift") -> GradCheckReport:
    worst = 0.0
    worst_seed = 0
    for seed in range(trials):
        err = check_instance(seed, d, d1, eps, mode)
        if err > worst:
            worst = err
            worst_seed = seed
    return GradCheckReport(max_rel_err=worst, worst_seed=worst_seed, trials=trials)
