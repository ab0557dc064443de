"""Consensus training of a shared equilibrium representation.

One global round: the server averages the local representation parameters
reported by the previous round's participants, samples a new subset of
nodes, and each sampled node (1) fits its personal head to the broadcast
representation, (2) takes local gradient steps on its augmented local
objective - the data loss plus the dual inner product and the quadratic
consensus penalty - and (3) performs a dual ascent step. Unsampled nodes
keep all state untouched. A FedAvg baseline (equilibrium or explicit
representation) and adaptation of frozen representations to unseen nodes
are provided for comparisons.

Everything is deterministic for a fixed seed: every stochastic choice draws
from its own generator keyed by (seed, purpose, node, round), cross-node
reductions run in ascending node-id order, and worker threads only change
speed.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import Dataset, make_node_shards
from .errors import NumericError
from .implicit_grad import DeqGrads
from .model import (
    Batch,
    HeadLayer,
    HeadParams,
    explicit_gradient,
    full_gradient,
    head_forward,
    init_head,
    loss_and_grad,
)
from .projection import ProjectionSettings, project_inf_matrix
from .solver import DeqParams, SolverSettings, solve_fixed_point
from .tensor import inf_norm

__all__ = [
    "FedConfig",
    "NodeState",
    "ServerState",
    "RoundMetrics",
    "TrainingResult",
    "BaselineResult",
    "AdaptResult",
    "aggregate",
    "sample_nodes",
    "personalize_update",
    "rep_update",
    "dual_update",
    "aug_lagrangian_local",
    "aug_lagrangian_global",
    "run_round",
    "run_training",
    "evaluate",
    "adapt_unseen",
    "run_fedavg_baseline",
    "build_nodes",
    "init_deq_params",
]

SAMPLERS = ("uniform_without_replacement", "period_cyclic")
GRAD_MODES = ("stochastic", "full_batch")

# rng stream tags; every generator is keyed (seed, tag, ...) so streams
# never collide across purposes
_S_INIT = 1
_S_SAMPLER = 2
_S_BATCH = 3
_S_LAMBDA = 4
_S_UNSEEN = 5


@dataclass
class FedConfig:
    """All training hyperparameters."""

    rho: float = 0.01
    eta_rep: float = 0.05
    eta_per: float = 0.05
    epochs_rep: int = 5
    epochs_per: int = 3
    rounds_T: int = 50
    sample_fraction: float = 0.1
    sampler: str = "uniform_without_replacement"
    batch_size: int = 16
    grad_mode: str = "stochastic"
    backward_mode: str = "exact_ift"
    loss_kind: str = "softmax_cross_entropy"
    solver: SolverSettings = field(default_factory=SolverSettings)
    kappa: float = 0.95
    bisect_tol: float = 1e-12
    max_bisect_iters: int = 200
    seed: int = 0
    lambda_init: str = "zeros"
    project_every: str = "step"
    cache_on_broadcast: str = "keep"
    d1: int = 16
    head_hidden: int = 32
    activation: str = "softplus"

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.eta_rep <= 0 or self.eta_per <= 0:
            raise ValueError("learning rates must be positive")
        if min(self.epochs_rep, self.epochs_per) < 0:
            raise ValueError("epoch counts must be >= 0")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError("sample_fraction must lie in (0, 1]")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if self.lambda_init not in ("zeros", "random"):
            raise ValueError(f"unknown lambda_init {self.lambda_init!r}")
        if self.project_every not in ("step", "epoch"):
            raise ValueError(f"unknown project_every {self.project_every!r}")
        if self.cache_on_broadcast not in ("keep", "clear"):
            raise ValueError(f"unknown cache_on_broadcast {self.cache_on_broadcast!r}")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")

    def projection(self) -> ProjectionSettings:
        return ProjectionSettings(self.kappa, self.bisect_tol, self.max_bisect_iters)

    def with_(self, **kw) -> "FedConfig":
        return replace(self, **kw)


@dataclass
class ParamBlocks:
    """A (B, C, b)-shaped triple: dual variables, gaps, penalties."""

    B: np.ndarray
    C: np.ndarray
    b: np.ndarray

    @staticmethod
    def zeros_like(p: DeqParams) -> "ParamBlocks":
        return ParamBlocks(np.zeros_like(p.B), np.zeros_like(p.C), np.zeros_like(p.b))

    def copy(self) -> "ParamBlocks":
        return ParamBlocks(self.B.copy(), self.C.copy(), self.b.copy())


def _gap(theta_i: DeqParams, theta: DeqParams) -> ParamBlocks:
    return ParamBlocks(theta_i.B - theta.B, theta_i.C - theta.C, theta_i.b - theta.b)


def _gap_inf_norm(g: ParamBlocks) -> float:
    return max(np.abs(g.B).max(), np.abs(g.C).max(), np.abs(g.b).max())


@dataclass
class NodeState:
    node_id: int
    theta: DeqParams
    head: HeadParams
    lam: ParamBlocks
    train: Batch
    test: Batch
    warm_cache: dict = field(default_factory=dict)


@dataclass
class ServerState:
    theta: DeqParams
    round: int = 0
    participants: list = field(default_factory=list)  # S_t, fed into the next aggregation


@dataclass
class RoundMetrics:
    round: int
    mean_train_loss: float
    global_aug_lagrangian: float
    consensus_residual_max: float
    consensus_residual_mean: float
    mean_test_accuracy: float
    accuracy_std: float
    mean_fp_iterations: float
    participating_nodes: list

    FIELDS = (
        "round",
        "mean_train_loss",
        "global_aug_lagrangian",
        "consensus_residual_max",
        "consensus_residual_mean",
        "mean_test_accuracy",
        "accuracy_std",
        "mean_fp_iterations",
        "participating_nodes",
    )


class SolveStats:
    """Accumulates fixed-point solver effort across gradient calls."""

    def __init__(self):
        self.iterations = 0
        self.solves = 0
        self.failures = 0

    def add(self, fg):
        self.iterations += fg.fp_iterations
        self.solves += fg.fp_solves
        self.failures += fg.fp_failures

    def merge(self, other: "SolveStats"):
        self.iterations += other.iterations
        self.solves += other.solves
        self.failures += other.failures


def _stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng((seed,) + tags)


def init_deq_params(
    d: int,
    d1: int,
    activation: str,
    kappa: float,
    rng: np.random.Generator,
    target_inf_norm: Optional[float] = None,
) -> DeqParams:
    """Random layer parameters with inf_norm(B) scaled to target_inf_norm.

    The default puts B well inside the contraction ball (half of kappa):
    starting on the boundary leaves the projection active from the first
    step, which stalls consensus on the recurrent block."""
    B = rng.normal(0.0, 1.0, size=(d1, d1))
    norm = inf_norm(B)
    target = 0.5 * kappa if target_inf_norm is None else target_inf_norm
    if norm > 0:
        B *= target / norm
    scale = np.sqrt(6.0 / (d + d1))
    C = rng.uniform(-scale, scale, size=(d1, d))
    return DeqParams(B, C, np.zeros(d1), activation)


def build_nodes(shards, num_classes: int, cfg: FedConfig):
    """Initial server and node states: a common representation, per-node
    heads and duals, per-node train/test shards."""
    d = shards[0][0].features.shape[1]
    theta0 = init_deq_params(d, cfg.d1, cfg.activation, cfg.kappa, _stream(cfg.seed, _S_INIT, 0))
    nodes = []
    for i, (train, test) in enumerate(shards):
        head = init_head(
            [cfg.d1, cfg.head_hidden, num_classes], cfg.activation, _stream(cfg.seed, _S_INIT, i + 1)
        )
        if cfg.lambda_init == "random":
            lrng = _stream(cfg.seed, _S_LAMBDA, i)
            lam = ParamBlocks(
                lrng.normal(0.0, 0.01, theta0.B.shape),
                lrng.normal(0.0, 0.01, theta0.C.shape),
                lrng.normal(0.0, 0.01, theta0.b.shape),
            )
        else:
            lam = ParamBlocks.zeros_like(theta0)
        nodes.append(NodeState(i, theta0.copy(), head, lam, train, test))
    # every node reports into the first aggregation
    server = ServerState(theta0.copy(), 0, list(range(len(nodes))))
    return server, nodes


def aggregate(server: ServerState, participants) -> DeqParams:
    """Entrywise uniform mean of the participants' representation blocks."""
    if not participants:
        raise ValueError("cannot aggregate an empty participant set")
    B = np.mean([n.theta.B for n in participants], axis=0)
    C = np.mean([n.theta.C for n in participants], axis=0)
    b = np.mean([n.theta.b for n in participants], axis=0)
    return DeqParams(B, C, b, server.theta.activation)


def sample_nodes(sampler: str, n: int, fraction: float, round_idx: int, rng) -> list:
    """Participant ids for one round: either uniform without replacement or
    a deterministic rotation that covers every id within ceil(n/k) rounds."""
    k = int(fraction * n)
    if k < 1:
        raise ValueError("sample_fraction too small: no nodes selected")
    if sampler == "uniform_without_replacement":
        return sorted(int(i) for i in rng.choice(n, size=k, replace=False))
    if sampler == "period_cyclic":
        return [(round_idx * k + j) % n for j in range(k)]
    raise ValueError(f"unknown sampler {sampler!r}")


def _minibatches(batch: Batch, cfg: FedConfig, node_id: int, round_idx: int, phase: int, epoch: int):
    if cfg.grad_mode == "full_batch":
        yield batch
        return
    rng = _stream(cfg.seed, _S_BATCH, node_id, round_idx, phase, epoch)
    order = rng.permutation(len(batch))
    for start in range(0, len(order), cfg.batch_size):
        yield batch.take(order[start : start + cfg.batch_size])


def personalize_update(
    node: NodeState, theta_broadcast: DeqParams, cfg: FedConfig, round_idx: int = 0,
    stats: Optional[SolveStats] = None,
) -> HeadParams:
    """Gradient descent on the local loss w.r.t. the head only, with the
    representation frozen at the broadcast value. Starts from the node's
    current head (carried over between rounds) and mutates it in place."""
    for epoch in range(cfg.epochs_per):
        for mb in _minibatches(node.train, cfg, node.node_id, round_idx, 0, epoch):
            fg = full_gradient(
                theta_broadcast, node.head, mb, cfg.loss_kind, cfg.backward_mode,
                cfg.solver, node.warm_cache,
            )
            if stats is not None:
                stats.add(fg)
            for layer, (dw, db) in zip(node.head.layers, fg.gw.layers):
                layer.weight -= cfg.eta_per * dw
                layer.bias -= cfg.eta_per * db
    return node.head


def rep_update(
    node: NodeState, theta_broadcast: DeqParams, cfg: FedConfig, round_idx: int = 0,
    stats: Optional[SolveStats] = None,
) -> DeqParams:
    """Local representation steps on the augmented objective.

    Every step applies the data gradient plus the correction
    lam + rho * (theta_i - theta_broadcast) blockwise, then re-projects the
    recurrent matrix so the contraction invariant holds at every observation
    point (or once per epoch, per cfg.project_every)."""
    proj = cfg.projection()
    th = node.theta
    for epoch in range(cfg.epochs_rep):
        for mb in _minibatches(node.train, cfg, node.node_id, round_idx, 1, epoch):
            fg = full_gradient(
                th, node.head, mb, cfg.loss_kind, cfg.backward_mode, cfg.solver, node.warm_cache
            )
            if stats is not None:
                stats.add(fg)
            g = fg.gtheta
            th.B -= cfg.eta_rep * (g.dB + node.lam.B + cfg.rho * (th.B - theta_broadcast.B))
            th.C -= cfg.eta_rep * (g.dC + node.lam.C + cfg.rho * (th.C - theta_broadcast.C))
            th.b -= cfg.eta_rep * (g.db + node.lam.b + cfg.rho * (th.b - theta_broadcast.b))
            if cfg.project_every == "step":
                th.B = project_inf_matrix(th.B, proj)
        if cfg.project_every == "epoch":
            th.B = project_inf_matrix(th.B, proj)
    return th


def dual_update(node: NodeState, theta_new: DeqParams, rho: float) -> ParamBlocks:
    """Ascent step lam += rho * (theta_i - theta)."""
    gap = _gap(node.theta, theta_new)
    node.lam.B += rho * gap.B
    node.lam.C += rho * gap.C
    node.lam.b += rho * gap.b
    return node.lam


def _forward_eval(theta: DeqParams, head: HeadParams, batch: Batch, cfg: FedConfig, cache=None):
    """Full-batch loss/accuracy at fixed parameters. Non-converged solves are
    used as-is; solves that blow up to NaN count as a wrong prediction with
    infinite loss (only reachable with projection disabled)."""
    total_loss = 0.0
    correct = 0
    stats = SolveStats()
    order = np.argsort(batch.sample_ids, kind="stable")
    for j in order:
        x = batch.features[j]
        sid = int(batch.sample_ids[j])
        z0 = cache.get(sid) if cache is not None else None
        try:
            res = solve_fixed_point(theta, x, z0, cfg.solver)
        except NumericError:
            stats.solves += 1
            stats.failures += 1
            total_loss += float("inf")
            continue
        stats.solves += 1
        stats.iterations += res.iterations
        if not res.converged:
            stats.failures += 1
        if cache is not None:
            cache[sid] = res.z_star
        out, _ = head_forward(head, res.z_star)
        loss, _ = loss_and_grad(cfg.loss_kind, out, int(batch.labels[j]))
        total_loss += loss
        if int(np.argmax(out)) == int(batch.labels[j]):
            correct += 1
    n = len(batch)
    return total_loss / n, correct / n, stats


def aug_lagrangian_local(node: NodeState, theta: DeqParams, cfg: FedConfig, loss_eval=None) -> float:
    """Local augmented objective: full-batch loss at (theta_i, w_i) plus
    <lam, theta_i - theta> plus (rho/2) ||theta_i - theta||^2, the inner
    product and norm taken over the flattened (B, C, b) blocks jointly."""
    if loss_eval is None:
        loss_eval, _, _ = _forward_eval(node.theta, node.head, node.train, cfg, node.warm_cache)
    gap = _gap(node.theta, theta)
    inner = float((node.lam.B * gap.B).sum() + (node.lam.C * gap.C).sum() + (node.lam.b * gap.b).sum())
    quad = float((gap.B ** 2).sum() + (gap.C ** 2).sum() + (gap.b ** 2).sum())
    return loss_eval + inner + 0.5 * cfg.rho * quad


def aug_lagrangian_global(nodes, theta: DeqParams, cfg: FedConfig) -> float:
    """Sum of the local augmented objectives over every node."""
    return sum(aug_lagrangian_local(node, theta, cfg) for node in nodes)


def _update_one_node(node: NodeState, theta_new: DeqParams, cfg: FedConfig, round_idx: int):
    if cfg.cache_on_broadcast == "clear":
        node.warm_cache.clear()
    stats = SolveStats()
    personalize_update(node, theta_new, cfg, round_idx, stats)
    rep_update(node, theta_new, cfg, round_idx, stats)
    dual_update(node, theta_new, cfg.rho)
    return stats


def _round_metrics(round_idx, nodes, theta, cfg, train_stats, participants):
    losses, accs, residuals = [], [], []
    lagrangian = 0.0
    for node in nodes:
        loss, _, _ = _forward_eval(node.theta, node.head, node.train, cfg, node.warm_cache)
        _, acc, _ = _forward_eval(node.theta, node.head, node.test, cfg, node.warm_cache)
        lagrangian += aug_lagrangian_local(node, theta, cfg, loss_eval=loss)
        losses.append(loss)
        accs.append(acc)
        residuals.append(_gap_inf_norm(_gap(node.theta, theta)))
    mean_iters = train_stats.iterations / train_stats.solves if train_stats.solves else 0.0
    return RoundMetrics(
        round=round_idx,
        mean_train_loss=float(np.mean(losses)),
        global_aug_lagrangian=float(lagrangian),
        consensus_residual_max=float(np.max(residuals)),
        consensus_residual_mean=float(np.mean(residuals)),
        mean_test_accuracy=float(np.mean(accs)),
        accuracy_std=float(np.std(accs)),
        mean_fp_iterations=float(mean_iters),
        participating_nodes=list(participants),
    )


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FEDEQ_THREADS", "1")))
    except ValueError:
        return 1


def run_round(server: ServerState, nodes, cfg: FedConfig, round_idx: int, pool=None) -> RoundMetrics:
    """One global round: refresh the consensus parameters, sample a new
    subset, update each sampled node (head, representation, dual), then
    record metrics over all nodes.

    The consensus step averages the latest parameters of every node (the
    previous round's participants contribute fresh values, the rest their
    last reported ones). Averaging only the participants makes the
    deterministic cyclic schedule a delayed ring whose consensus error
    grows without bound, which contradicts the monotone-descent and
    consensus invariants this trainer is required to satisfy."""
    theta_new = aggregate(server, nodes)
    server.theta = theta_new
    sampled = sample_nodes(
        cfg.sampler, len(nodes), cfg.sample_fraction, round_idx,
        _stream(cfg.seed, _S_SAMPLER, round_idx),
    )

    stats = SolveStats()
    if pool is None:
        results = [_update_one_node(nodes[i], theta_new, cfg, round_idx) for i in sampled]
    else:
        results = list(
            pool.map(lambda i: _update_one_node(nodes[i], theta_new, cfg, round_idx), sampled)
        )
    for st in results:
        stats.merge(st)

    server.participants = sampled
    server.round = round_idx + 1
    return _round_metrics(round_idx, nodes, theta_new, cfg, stats, sampled)


@dataclass
class TrainingResult:
    metrics: list
    server: ServerState
    nodes: list
    final_accuracy: float  # mean over the last (up to) 10 rounds
    final_accuracy_std: float


def run_training(cfg: FedConfig, shards, num_classes: int, on_round=None) -> TrainingResult:
    """Full training loop; deterministic for a fixed seed under any worker
    count. ``on_round`` (if given) receives each RoundMetrics as it is
    produced, so partial results survive failures."""
    server, nodes = build_nodes(shards, num_classes, cfg)
    metrics = []
    workers = _worker_count()
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(cfg.rounds_T):
            m = run_round(server, nodes, cfg, t, pool)
            metrics.append(m)
            if on_round is not None:
                on_round(m)
    finally:
        if pool is not None:
            pool.shutdown()
    tail = metrics[-10:]
    acc = float(np.mean([m.mean_test_accuracy for m in tail])) if tail else 0.0
    std = float(np.mean([m.accuracy_std for m in tail])) if tail else 0.0
    return TrainingResult(metrics, server, nodes, acc, std)


def evaluate(nodes, mode: str = "personalized", server_theta: Optional[DeqParams] = None, cfg: FedConfig = None):
    """Mean/std of per-node accuracy on held-out local shards.

    mode 'personalized' scores each node's own (theta_i, w_i);
    'global_theta_plus_local_head' scores the shared representation under
    each node's head."""
    cfg = cfg or FedConfig()
    if mode not in ("personalized", "global_theta_plus_local_head"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if mode == "global_theta_plus_local_head" and server_theta is None:
        raise ValueError("server_theta required for global evaluation")
    accs = []
    for node in nodes:
        if len(node.test) == 0:
            raise ValueError(f"node {node.node_id} has an empty test shard")
        theta = node.theta if mode == "personalized" else server_theta
        _, acc, _ = _forward_eval(theta, node.head, node.test, cfg, node.warm_cache)
        accs.append(acc)
    return float(np.mean(accs)), float(np.std(accs))


@dataclass
class AdaptResult:
    mean_accuracy: float
    accuracy_std: float
    accuracies: list
    nodes: list


def adapt_unseen(theta_final: DeqParams, fresh_shards, num_classes: int, cfg: FedConfig) -> AdaptResult:
    """Fit personal heads for unseen nodes on top of a frozen representation
    and score them on their held-out shards. theta_final is never mutated."""
    accs = []
    fresh_nodes = []
    for i, (train, test) in enumerate(fresh_shards):
        head = init_head(
            [cfg.d1, cfg.head_hidden, num_classes], cfg.activation, _stream(cfg.seed, _S_UNSEEN, i)
        )
        node = NodeState(i, theta_final.copy(), head, ParamBlocks.zeros_like(theta_final), train, test)
        personalize_update(node, theta_final, cfg, round_idx=0)
        _, acc, _ = _forward_eval(theta_final, node.head, node.test, cfg, node.warm_cache)
        accs.append(acc)
        fresh_nodes.append(node)
    return AdaptResult(float(np.mean(accs)), float(np.std(accs)), accs, fresh_nodes)


@dataclass
class BaselineResult:
    metrics: list
    theta: Optional[DeqParams]
    head: Optional[HeadParams]
    fp_solves: int
    fp_failures: int
    final_accuracy: float


def run_fedavg_baseline(
    cfg: FedConfig,
    shards,
    num_classes: int,
    model: str = "deq",
    projection_enabled: bool = True,
    init_inf_norm: Optional[float] = None,
    init_nonnegative_B: bool = False,
    on_round=None,
) -> BaselineResult:
    """Classic FedAvg: every parameter is locally trained and server-averaged,
    no duals, no personalization retained across rounds.

    model 'deq' trains the equilibrium layer + head; 'explicit_mlp' replaces
    the equilibrium layer with two dense layers of the same width.
    projection_enabled=False (deq only) skips the contraction projection, and
    init_inf_norm overrides the initial recurrent-matrix norm - together they
    expose the divergence the projection exists to prevent.
    init_nonnegative_B makes the recurrent matrix entrywise nonnegative, for
    which the infinity norm is a tight bound on the spectral radius (a random
    sign pattern at the same norm is usually still strongly contractive)."""
    if model not in ("deq", "explicit_mlp"):
        raise ValueError(f"unknown baseline model {model!r}")
    d = shards[0][0].features.shape[1]
    rng = _stream(cfg.seed, _S_INIT, 0)
    if model == "deq":
        g_theta = init_deq_params(d, cfg.d1, cfg.activation, cfg.kappa, rng,
                                  target_inf_norm=init_inf_norm)
        if init_nonnegative_B:
            # every row at the target sum: for a nonnegative matrix the
            # spectral radius then equals the infinity norm (tight case)
            target = inf_norm(g_theta.B)
            g_theta.B = np.abs(g_theta.B)
            g_theta.B *= target / g_theta.B.sum(axis=1, keepdims=True)
        if projection_enabled:
            g_theta.B = project_inf_matrix(g_theta.B, cfg.projection())
        g_head = init_head([cfg.d1, cfg.head_hidden, num_classes], cfg.activation,
                           _stream(cfg.seed, _S_INIT, 1))
    else:
        g_theta = None
        g_head = init_head([d, cfg.d1, cfg.d1, cfg.head_hidden, num_classes], cfg.activation,
                           _stream(cfg.seed, _S_INIT, 1))

    nodes = [NodeState(i, g_theta.copy() if g_theta else None, g_head.copy(),
                       None, train, test) for i, (train, test) in enumerate(shards)]
    n = len(nodes)
    metrics = []
    total = SolveStats()
    proj = cfg.projection()

    for t in range(cfg.rounds_T):
        sampled = sample_nodes(cfg.sampler, n, cfg.sample_fraction, t,
                               _stream(cfg.seed, _S_SAMPLER, t))
        for i in sampled:
            node = nodes[i]
            node.head = g_head.copy()
            if model == "deq":
                node.theta = g_theta.copy()
                if cfg.cache_on_broadcast == "clear":
                    node.warm_cache.clear()
            for epoch in range(cfg.epochs_rep):
                for mb in _minibatches(node.train, cfg, i, t, 2, epoch):
                    if model == "deq":
                        fg = full_gradient(node.theta, node.head, mb, cfg.loss_kind,
                                           cfg.backward_mode, cfg.solver, node.warm_cache)
                        total.add(fg)
                        node.theta.B -= cfg.eta_rep * fg.gtheta.dB
                        node.theta.C -= cfg.eta_rep * fg.gtheta.dC
                        node.theta.b -= cfg.eta_rep * fg.gtheta.db
                        if projection_enabled and cfg.project_every == "step":
                            node.theta.B = project_inf_matrix(node.theta.B, proj)
                        gw = fg.gw
                    else:
                        gw, _ = explicit_gradient(node.head, mb, cfg.loss_kind)
                    for layer, (dw, db) in zip(node.head.layers, gw.layers):
                        layer.weight -= cfg.eta_rep * dw
                        layer.bias -= cfg.eta_rep * db
                if model == "deq" and projection_enabled and cfg.project_every == "epoch":
                    node.theta.B = project_inf_matrix(node.theta.B, proj)

        picked = [nodes[i] for i in sampled]
        if model == "deq":
            g_theta = DeqParams(
                np.mean([p.theta.B for p in picked], axis=0),
                np.mean([p.theta.C for p in picked], axis=0),
                np.mean([p.theta.b for p in picked], axis=0),
                cfg.activation,
            )
        g_head = HeadParams([
            HeadLayer(
                np.mean([p.head.layers[k].weight for p in picked], axis=0),
                np.mean([p.head.layers[k].bias for p in picked], axis=0),
                l0.activation,
            )
            for k, l0 in enumerate(g_head.layers)
        ])

        losses, accs = [], []
        for node in nodes:
            if model == "deq":
                loss, _, _ = _forward_eval(g_theta, g_head, node.train, cfg, node.warm_cache)
                _, acc, _ = _forward_eval(g_theta, g_head, node.test, cfg, node.warm_cache)
            else:
                loss = _explicit_eval(g_head, node.train, cfg)[0]
                acc = _explicit_eval(g_head, node.test, cfg)[1]
            losses.append(loss)
            accs.append(acc)
        metrics.append(RoundMetrics(
            round=t,
            mean_train_loss=float(np.mean(losses)),
            global_aug_lagrangian=float(np.sum(losses)),
            consensus_residual_max=0.0,
            consensus_residual_mean=0.0,
            mean_test_accuracy=float(np.mean(accs)),
            accuracy_std=float(np.std(accs)),
            mean_fp_iterations=total.iterations / total.solves if total.solves else 0.0,
            participating_nodes=list(sampled),
        ))
        if on_round is not None:
            on_round(metrics[-1])

    tail = metrics[-10:]
    acc = float(np.mean([m.mean_test_accuracy for m in tail])) if tail else 0.0
    return BaselineResult(metrics, g_theta, g_head, total.solves, total.failures, acc)


def _explicit_eval(head: HeadParams, batch: Batch, cfg: FedConfig):
    total_loss = 0.0
    correct = 0
    order = np.argsort(batch.sample_ids, kind="stable")
    for j in order:
        out, _ = head_forward(head, batch.features[j])
        loss, _ = loss_and_grad(cfg.loss_kind, out, int(batch.labels[j]))
        total_loss += loss
        if int(np.argmax(out)) == int(batch.labels[j]):
            correct += 1
    n = len(batch)
    return total_loss / n, correct / n
