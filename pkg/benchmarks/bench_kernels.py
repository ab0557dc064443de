"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the three hot kernels (fixed-point solve, adjoint solve, row
projection) and an end-to-end mini training run in each lane. Run as:

    python benchmarks/bench_kernels.py
"""

import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np

from fedeq import _kernels_py
from fedeq.projection import ProjectionSettings, project_inf_matrix

try:
    from fedeq import _accel
except ImportError:
    _accel = None


def make_cases(n_cases=50, d1=32, d=16, kappa=0.95, seed=0):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n_cases):
        B = project_inf_matrix(rng.normal(size=(d1, d1)), ProjectionSettings(kappa=kappa))
        cxb = np.ascontiguousarray(rng.normal(size=d1))
        z0 = np.zeros(d1)
        dphi = np.ascontiguousarray(rng.uniform(0.0, 1.0, size=d1))
        y = rng.normal(size=d1)
        raw = np.ascontiguousarray(rng.normal(scale=2.0, size=(d1, d1)))
        cases.append((B, cxb, z0, dphi, y, raw))
    return cases


def time_it(fn, reps=3):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_backend(impl, cases):
    def fp_plain():
        for B, cxb, z0, *_ in cases:
            impl.fp_solve(B, cxb, z0, 0, 0, 2000, 1e-8, 1, 1.0, 1e-10)

    def fp_anderson():
        for B, cxb, z0, *_ in cases:
            impl.fp_solve(B, cxb, z0, 0, 1, 2000, 1e-8, 5, 1.0, 1e-10)

    def adjoint():
        for B, _, _, dphi, y, _ in cases:
            impl.adjoint_solve(B, dphi, y, 5000, 1e-10)

    def project():
        for *_, raw in cases:
            impl.project_rows(raw, 0.95, 1e-12, 200)

    return {
        "fp_solve plain": time_it(fp_plain),
        "fp_solve anderson": time_it(fp_anderson),
        "adjoint_solve": time_it(adjoint),
        "project_rows": time_it(project),
    }


def bench_end_to_end():
    """Small CLI training run per lane (FEDEQ_PURE_PYTHON toggles the lane)."""
    doc = {
        "rho": 0.05, "rounds_T": 8, "sample_fraction": 0.5, "sampler": "period_cyclic",
        "grad_mode": "full_batch", "seed": 1, "d1": 24, "head_hidden": 16,
        "eta_rep": 0.1, "eta_per": 0.1,
        "dataset": {"kind": "synthetic", "n_nodes": 6, "num_classes": 4, "dim": 10,
                    "samples_per_node": 40, "heterogeneity": 0.5, "classes_per_node": 2},
    }
    out = {}
    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "run.json")
        with open(cfg, "w") as fh:
            json.dump(doc, fh)
        for label, extra in (("compiled", {}), ("python", {"FEDEQ_PURE_PYTHON": "1"})):
            env = dict(os.environ, **extra)
            t0 = time.perf_counter()
            r = subprocess.run(
                [sys.executable, "-m", "fedeq.cli", "train", "--config", cfg,
                 "--output", os.path.join(tmp, label)],
                env=env, capture_output=True, text=True,
            )
            if r.returncode != 0:
                raise RuntimeError(r.stderr)
            out[label] = time.perf_counter() - t0
    return out


def main():
    cases = make_cases()
    rows = [("kernel", "python [s]", "compiled [s]", "speedup")]
    py = bench_backend(_kernels_py, cases)
    cc = bench_backend(_accel, cases) if _accel is not None else None
    for name, t_py in py.items():
        if cc is None:
            rows.append((name, f"{t_py:.4f}", "n/a", "n/a"))
        else:
            rows.append((name, f"{t_py:.4f}", f"{cc[name]:.4f}", f"{t_py / cc[name]:.1f}x"))

    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        print("  ".join(v.ljust(w) for v, w in zip(r, widths)))

    if _accel is None:
        print("\ncompiled extension not built; only the fallback was timed")
        return

    print("\nend-to-end training (CLI, includes interpreter startup):")
    e2e = bench_end_to_end()
    print(f"  compiled lane: {e2e['compiled']:.2f}s"
          f"  python lane: {e2e['python']:.2f}s"
          f"  speedup: {e2e['python'] / e2e['compiled']:.1f}x")


if __name__ == "__main__":
    main()
