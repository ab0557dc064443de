"""Federated deep-equilibrium learning at desk scale.

A simulator and library for training a shared implicit (fixed-point) layer
across heterogeneous nodes via consensus ADMM, with personalized explicit
heads, exact implicit-function-theorem gradients (or a Jacobian-free
approximation), Anderson-accelerated solvers, and a contraction-enforcing
infinity-norm projection. Hot kernels run through an optional compiled
extension with a pure-numpy fallback (see ``fedeq.kernels.backend_name``).
"""

from .kernels import backend_name
from .solver import DeqParams, FixedPointResult, SolverSettings
from .projection import ProjectionSettings, project_inf_matrix, project_l1_row
from .implicit_grad import DeqGrads, finite_diff_grad, grad_theta, solve_adjoint, vjp_g_z
from .model import Batch, HeadLayer, HeadParams, full_gradient, head_backward, head_forward, predict
from .data import Dataset, PartitionSpec, generate_synthetic, load_csv, partition_by_label
from .federation import (
    FedConfig,
    NodeState,
    RoundMetrics,
    ServerState,
    adapt_unseen,
    evaluate,
    run_fedavg_baseline,
    run_training,
)

__version__ = "0.1.0"
