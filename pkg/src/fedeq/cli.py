"""Command-line entry point.

Subcommands: train (run a federated training job and emit per-round metrics),
gradcheck (validate implicit gradients against finite differences), project
(project a matrix onto the infinity-norm ball), partition (write a by-label
partition manifest for a CSV dataset).

Exit codes: 0 success, 1 numeric failure, 2 invalid configuration or input.
Primary outputs are byte-identical for identical inputs; wall-clock data
goes to a separate run_info.json sidecar. The FEDEQ_THREADS environment
variable caps worker threads and never changes results.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import kernels
from .config import canonical_json, load_run_config, load_shards, parse_run_config
from .data import load_csv, partition_by_label, PartitionSpec
from .errors import ConfigError, DataFormatError, NumericError
from .federation import FedConfig, adapt_unseen, run_training
from .gradcheck import run_gradcheck
from .projection import ProjectionSettings, project_inf_matrix
from .tensor import inf_norm


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ";".join(str(i) for i in v)
    return str(v)


class _MetricsWriter:
    """Append-only per-round writers, flushed after every round."""

    def __init__(self, out_dir, emit):
        self.csv_fh = None
        self.jsonl_fh = None
        from .federation import RoundMetrics

        self.fields = RoundMetrics.FIELDS
        if emit in ("csv", "both"):
            self.csv_fh = open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8")
            self.csv_fh.write(",".join(self.fields) + "\n")
            self.csv_fh.flush()
        if emit in ("jsonl", "both"):
            self.jsonl_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w", encoding="utf-8")

    def write(self, m):
        if self.csv_fh:
            self.csv_fh.write(",".join(_fmt(getattr(m, f)) for f in self.fields) + "\n")
            self.csv_fh.flush()
        if self.jsonl_fh:
            doc = {f: getattr(m, f) for f in self.fields}
            self.jsonl_fh.write(json.dumps(doc, sort_keys=True) + "\n")
            self.jsonl_fh.flush()

    def close(self):
        for fh in (self.csv_fh, self.jsonl_fh):
            if fh:
                fh.close()


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    fed = rc.fed
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.rounds is not None:
        overrides["rounds_T"] = args.rounds
    if args.rho is not None:
        if args.rho <= 0:
            raise ConfigError("rho", "must be positive")
        overrides["rho"] = args.rho
    if args.sampler is not None:
        overrides["sampler"] = args.sampler
    if args.backward is not None:
        overrides["backward_mode"] = args.backward
    if args.grad_mode is not None:
        overrides["grad_mode"] = args.grad_mode
    if overrides:
        fed = fed.with_(**overrides)
        rc.fed = fed
    if args.output is not None:
        rc.output_dir = args.output

    os.makedirs(rc.output_dir, exist_ok=True)
    train_shards, unseen_shards, num_classes = load_shards(rc)

    started = time.time()
    writer = _MetricsWriter(rc.output_dir, rc.emit)
    try:
        result = run_training(fed, train_shards, num_classes, on_round=writer.write)
    finally:
        writer.close()

    summary = {
        "rounds": len(result.metrics),
        "final_accuracy_mean_last10": result.final_accuracy,
        "final_accuracy_std_last10": result.final_accuracy_std,
        "unseen_accuracy_mean": None,
        "participating_per_round": int(fed.sample_fraction * len(train_shards)),
    }
    if unseen_shards:
        adapt = adapt_unseen(result.server.theta, unseen_shards, num_classes, fed)
        summary["unseen_accuracy_mean"] = adapt.mean_accuracy

    with open(os.path.join(rc.output_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(rc.output_dir, "config_canonical.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(rc))
    # timestamps live here so the primary outputs stay byte-identical
    with open(os.path.join(rc.output_dir, "run_info.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "started_unix": started,
                "elapsed_seconds": time.time() - started,
                "kernel_backend": kernels.backend_name(),
                "threads": os.environ.get("FEDEQ_THREADS", "1"),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"trained {len(result.metrics)} rounds; "
          f"final accuracy (last-10 mean) {result.final_accuracy:.4f}")
    if summary["unseen_accuracy_mean"] is not None:
        print(f"unseen-node accuracy {summary['unseen_accuracy_mean']:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise ConfigError("trials", "must be >= 1")
    if args.d > 16 or args.d1 > 16 or args.d < 1 or args.d1 < 1:
        raise ConfigError("dims", "d and d1 must lie in [1, 16]")
    if args.eps <= 0:
        raise ConfigError("eps", "must be positive")
    report = run_gradcheck(d=args.d, d1=args.d1, trials=args.trials, eps=args.eps, mode=args.mode)
    print(f"mode={args.mode} trials={args.trials} max relative error {report.max_rel_err:.3e} "
          f"(worst seed {report.worst_seed})")
    if args.mode == "exact_ift" and report.max_rel_err > 1e-5:
        print(f"FAIL: exceeds 1e-5; replay with seed {report.worst_seed}", file=sys.stderr)
        return 1
    return 0


def cmd_project(args) -> int:
    try:
        rows = []
        with open(args.input, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append([float(v) for v in line.split(",")])
                except ValueError:
                    raise DataFormatError("non-numeric matrix entry", line=lineno) from None
    except FileNotFoundError:
        raise ConfigError("input", f"file not found: {args.input}") from None
    if not rows or any(len(r) != len(rows) for r in rows):
        raise DataFormatError(f"expected a square matrix, got {len(rows)} rows")
    B = np.asarray(rows)
    settings = ProjectionSettings(kappa=args.kappa)
    before = inf_norm(B)
    projected = project_inf_matrix(B, settings)
    after = inf_norm(projected)
    if before <= args.kappa:
        print(f"no-op: inf_norm {before!r} already <= kappa {args.kappa!r}")
    print(f"inf_norm before={before!r} after={after!r} kappa={args.kappa!r} "
          f"feasible={after <= args.kappa + 1e-9}")
    with open(args.output, "w", encoding="utf-8") as fh:
        for row in projected:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return 0


def cmd_partition(args) -> int:
    ds = load_csv(args.data)
    spec = PartitionSpec(
        n_nodes=args.nodes,
        classes_per_node=args.classes_per_node,
        test_fraction=args.test_fraction,
        seed=args.seed,
    )
    try:
        shards = partition_by_label(ds, spec)
    except ValueError as exc:
        raise ConfigError("partition", str(exc)) from None
    manifest = {
        "n_nodes": len(shards),
        "num_classes": ds.num_classes,
        "shards": [
            {
                "node": i,
                "labels": sorted(set(int(v) for v in train.labels)),
                "train_ids": [int(v) for v in train.sample_ids],
                "test_ids": [int(v) for v in test.sample_ids],
            }
            for i, (train, test) in enumerate(shards)
        ],
    }
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(shards)} shards to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedeq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run federated training from a JSON config")
    p.add_argument("--config", required=True, help="path to the JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--sampler", choices=["uniform_without_replacement", "period_cyclic"])
    p.add_argument("--backward", choices=["exact_ift", "jfb"])
    p.add_argument("--grad-mode", dest="grad_mode", choices=["stochastic", "full_batch"])
    p.add_argument("--output", help="output directory (overrides config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="implicit gradients vs. finite differences")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--d1", type=int, default=4)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--mode", choices=["exact_ift", "jfb"], default="exact_ift")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("project", help="project a matrix onto the infinity-norm ball")
    p.add_argument("--input", required=True, help="CSV matrix, one row per line")
    p.add_argument("--output", required=True)
    p.add_argument("--kappa", type=float, default=0.95)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("partition", help="write a by-label partition manifest")
    p.add_argument("--data", required=True, help="dataset CSV path")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--classes-per-node", dest="classes_per_node", type=int, required=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_partition)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
