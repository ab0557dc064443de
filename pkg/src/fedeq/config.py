"""Run configuration: JSON parsing, validation, canonical serialization.

The config file is a single JSON document with flat keys mirroring the
training hyperparameters, a nested ``solver`` object, and a nested
``dataset`` object (synthetic generator parameters or a CSV path plus
partition parameters). Command-line flags override file values. Validation
failures raise ConfigError naming the offending field.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .data import (
    Dataset,
    PartitionSpec,
    generate_synthetic,
    load_csv,
    make_node_shards,
    partition_by_label,
)
from .errors import ConfigError
from .federation import GRAD_MODES, SAMPLERS, FedConfig
from .implicit_grad import BACKWARD_MODES
from .model import LOSS_KINDS
from .solver import SolverSettings
from . import activations

__all__ = ["RunConfig", "parse_run_config", "load_run_config", "canonical_json", "load_shards"]


@dataclass
class RunConfig:
    fed: FedConfig
    dataset: dict
    unseen_node_fraction: float = 0.0
    output_dir: str = "out"
    emit: str = "csv"  # csv | jsonl | both


def _req(doc, key, typ, check=None, msg="invalid value"):
    if key not in doc:
        raise ConfigError(key, "missing required field")
    return _opt(doc, key, typ, None, check, msg)


def _opt(doc, key, typ, default, check=None, msg="invalid value"):
    if key not in doc or doc[key] is None:
        return default
    v = doc[key]
    if typ is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, typ) or isinstance(v, bool):
        raise ConfigError(key, f"expected {typ.__name__}, got {type(v).__name__}")
    if check is not None and not check(v):
        raise ConfigError(key, msg)
    return v


def _choice(doc, key, options, default):
    v = _opt(doc, key, str, default)
    if v not in options:
        raise ConfigError(key, f"must be one of {sorted(options)}")
    return v


def parse_run_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")

    sdoc = doc.get("solver", {})
    if not isinstance(sdoc, dict):
        raise ConfigError("solver", "must be an object")
    solver = SolverSettings(
        method=_choice(sdoc, "method", ("plain", "anderson"), "anderson"),
        max_iters=_opt(sdoc, "max_iters", int, 200, lambda v: v >= 1, "must be >= 1"),
        tol=_opt(sdoc, "tol", float, 1e-6, lambda v: v > 0, "must be positive"),
        history_m=_opt(sdoc, "history_m", int, 5, lambda v: v >= 1, "must be >= 1"),
        damping=_opt(sdoc, "damping", float, 1.0, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
        ls_regularization=_opt(sdoc, "ls_regularization", float, 1e-10, lambda v: v > 0,
                               "must be positive"),
        adjoint_method=_choice(sdoc, "adjoint_method", ("fixed_point", "cg_normal"), "fixed_point"),
    )

    try:
        fed = FedConfig(
            rho=_req(doc, "rho", float, lambda v: v > 0, "must be positive"),
            eta_rep=_opt(doc, "eta_rep", float, 0.05, lambda v: v > 0, "must be positive"),
            eta_per=_opt(doc, "eta_per", float, 0.05, lambda v: v > 0, "must be positive"),
            epochs_rep=_opt(doc, "epochs_rep", int, 5, lambda v: v >= 0, "must be >= 0"),
            epochs_per=_opt(doc, "epochs_per", int, 3, lambda v: v >= 0, "must be >= 0"),
            rounds_T=_req(doc, "rounds_T", int, lambda v: v >= 0, "must be >= 0"),
            sample_fraction=_opt(doc, "sample_fraction", float, 0.1,
                                 lambda v: 0 < v <= 1, "must lie in (0, 1]"),
            sampler=_choice(doc, "sampler", SAMPLERS, "uniform_without_replacement"),
            batch_size=_opt(doc, "batch_size", int, 16, lambda v: v >= 1, "must be >= 1"),
            grad_mode=_choice(doc, "grad_mode", GRAD_MODES, "stochastic"),
            backward_mode=_choice(doc, "backward_mode", BACKWARD_MODES, "exact_ift"),
            loss_kind=_choice(doc, "loss_kind", LOSS_KINDS, "softmax_cross_entropy"),
            solver=solver,
            kappa=_opt(doc, "kappa", float, 0.95, lambda v: 0 < v < 1, "must lie in (0, 1)"),
            bisect_tol=_opt(doc, "bisect_tol", float, 1e-12, lambda v: v > 0, "must be positive"),
            max_bisect_iters=_opt(doc, "max_bisect_iters", int, 200, lambda v: v >= 1,
                                  "must be >= 1"),
            seed=_opt(doc, "seed", int, 0),
            lambda_init=_choice(doc, "lambda_init", ("zeros", "random"), "zeros"),
            project_every=_choice(doc, "project_every", ("step", "epoch"), "step"),
            cache_on_broadcast=_choice(doc, "cache_on_broadcast", ("keep", "clear"), "keep"),
            d1=_opt(doc, "d1", int, 16, lambda v: v >= 1, "must be >= 1"),
            head_hidden=_opt(doc, "head_hidden", int, 32, lambda v: v >= 1, "must be >= 1"),
            activation=_choice(doc, "activation", activations.ACTIVATIONS, "softplus"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("<config>", str(exc)) from None

    ddoc = doc.get("dataset")
    if ddoc is None:
        raise ConfigError("dataset", "missing required field")
    if not isinstance(ddoc, dict):
        raise ConfigError("dataset", "must be an object")
    kind = _choice(ddoc, "kind", ("synthetic", "csv"), None)
    if kind is None:
        raise ConfigError("dataset.kind", "missing required field")
    dataset = {"kind": kind}
    if kind == "synthetic":
        dataset.update(
            n_nodes=_req(ddoc, "n_nodes", int, lambda v: v >= 1, "must be >= 1"),
            num_classes=_req(ddoc, "num_classes", int, lambda v: v >= 2, "must be >= 2"),
            dim=_req(ddoc, "dim", int, lambda v: v >= 1, "must be >= 1"),
            samples_per_node=_req(ddoc, "samples_per_node", int, lambda v: v >= 2,
                                  "must be >= 2"),
            heterogeneity=_req(ddoc, "heterogeneity", float, lambda v: 0 <= v <= 1,
                               "must lie in [0, 1]"),
            classes_per_node=_opt(ddoc, "classes_per_node", int, None,
                                  lambda v: v >= 1, "must be >= 1"),
            test_fraction=_opt(ddoc, "test_fraction", float, 0.2,
                               lambda v: 0 < v < 1, "must lie in (0, 1)"),
            data_seed=_opt(ddoc, "data_seed", int, None),
        )
    else:
        dataset.update(
            path=_req(ddoc, "path", str),
            n_nodes=_req(ddoc, "n_nodes", int, lambda v: v >= 1, "must be >= 1"),
            classes_per_node=_req(ddoc, "classes_per_node", int, lambda v: v >= 1,
                                  "must be >= 1"),
            num_classes=_opt(ddoc, "num_classes", int, None, lambda v: v >= 2, "must be >= 2"),
            test_fraction=_opt(ddoc, "test_fraction", float, 0.2,
                               lambda v: 0 < v < 1, "must lie in (0, 1)"),
            data_seed=_opt(ddoc, "data_seed", int, None),
        )

    unseen = _opt(doc, "unseen_node_fraction", float, 0.0,
                  lambda v: 0 <= v < 1, "must lie in [0, 1)")
    n_nodes = dataset["n_nodes"]
    if unseen > 0:
        k = unseen * n_nodes
        if abs(k - round(k)) > 1e-9:
            raise ConfigError("unseen_node_fraction",
                              f"{unseen} * {n_nodes} nodes is not an integer")
        if n_nodes - round(k) < 1:
            raise ConfigError("unseen_node_fraction", "no training nodes would remain")

    rc = RunConfig(
        fed=fed,
        dataset=dataset,
        unseen_node_fraction=unseen,
        output_dir=_opt(doc, "output_dir", str, "out"),
        emit=_choice(doc, "emit", ("csv", "jsonl", "both"), "csv"),
    )
    if int(fed.sample_fraction * _training_node_count(rc)) < 1:
        raise ConfigError("sample_fraction",
                          "sample_fraction * training nodes selects no nodes")
    return rc


def _training_node_count(rc: RunConfig) -> int:
    return rc.dataset["n_nodes"] - round(rc.unseen_node_fraction * rc.dataset["n_nodes"])


def load_run_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("<config>", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<config>", f"invalid JSON: {exc}") from None
    return parse_run_config(doc)


def canonical_json(rc: RunConfig) -> str:
    """Canonical form: every field explicit, keys sorted."""
    fed = rc.fed
    doc = {
        "rho": fed.rho,
        "eta_rep": fed.eta_rep,
        "eta_per": fed.eta_per,
        "epochs_rep": fed.epochs_rep,
        "epochs_per": fed.epochs_per,
        "rounds_T": fed.rounds_T,
        "sample_fraction": fed.sample_fraction,
        "sampler": fed.sampler,
        "batch_size": fed.batch_size,
        "grad_mode": fed.grad_mode,
        "backward_mode": fed.backward_mode,
        "loss_kind": fed.loss_kind,
        "solver": {
            "method": fed.solver.method,
            "max_iters": fed.solver.max_iters,
            "tol": fed.solver.tol,
            "history_m": fed.solver.history_m,
            "damping": fed.solver.damping,
            "ls_regularization": fed.solver.ls_regularization,
            "adjoint_method": fed.solver.adjoint_method,
        },
        "kappa": fed.kappa,
        "bisect_tol": fed.bisect_tol,
        "max_bisect_iters": fed.max_bisect_iters,
        "seed": fed.seed,
        "lambda_init": fed.lambda_init,
        "project_every": fed.project_every,
        "cache_on_broadcast": fed.cache_on_broadcast,
        "d1": fed.d1,
        "head_hidden": fed.head_hidden,
        "activation": fed.activation,
        "dataset": dict(rc.dataset),
        "unseen_node_fraction": rc.unseen_node_fraction,
        "output_dir": rc.output_dir,
        "emit": rc.emit,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_shards(rc: RunConfig):
    """Materialize per-node shards.

    Returns (train_shards, unseen_shards, num_classes); the unseen list is
    empty unless unseen_node_fraction > 0, in which case the last nodes are
    held out of training entirely.
    """
    ds_cfg = rc.dataset
    seed = ds_cfg["data_seed"] if ds_cfg["data_seed"] is not None else rc.fed.seed
    if ds_cfg["kind"] == "synthetic":
        ds, assignment = generate_synthetic(
            n_nodes=ds_cfg["n_nodes"],
            num_classes=ds_cfg["num_classes"],
            dim=ds_cfg["dim"],
            samples_per_node=ds_cfg["samples_per_node"],
            heterogeneity=ds_cfg["heterogeneity"],
            seed=seed,
            classes_per_node=ds_cfg["classes_per_node"],
        )
        shards = make_node_shards(ds, assignment, ds_cfg["test_fraction"], seed)
        num_classes = ds.num_classes
    else:
        ds = load_csv(ds_cfg["path"], ds_cfg["num_classes"])
        spec = PartitionSpec(
            n_nodes=ds_cfg["n_nodes"],
            classes_per_node=ds_cfg["classes_per_node"],
            test_fraction=ds_cfg["test_fraction"],
            seed=seed,
        )
        shards = partition_by_label(ds, spec)
        num_classes = ds.num_classes

    n_unseen = round(rc.unseen_node_fraction * len(shards))
    if n_unseen:
        return shards[:-n_unseen], shards[-n_unseen:], num_classes
    return shards, [], num_classes
