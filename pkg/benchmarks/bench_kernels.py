"""Timing comparison of the numba and pure-numpy simplex kernels.

The backend is chosen once when `synsim.lp` is imported, so each backend runs
in its own child process: the parent spawns `python bench_kernels.py
--backend numba|numpy`, collects JSON from both, checks that the two kernels
walked identical pivot sequences (same iteration counts, same objectives),
and prints the speedup table.

Two suites:

- placement: the phase-1 feasibility systems the per-round optimizer solves
  (3s capacity rows + n coverage rows over s*n variables, no objective),
- dense: random bounded maximization problems with inequality rows only.

Run from the repo root: `python benchmarks/bench_kernels.py`.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def placement_system(rng, s, n):
    """A feasibility LP shaped like the per-round placement system."""
    gpus = rng.integers(1, 5, size=n).astype(np.float64)
    cpus = rng.integers(1, 13, size=n).astype(np.float64)
    mem = rng.uniform(5.0, 350.0, size=n)
    nv = s * n
    A_ub = np.zeros((3 * s + n, nv))
    b_ub = np.zeros(3 * s + n)
    for i in range(s):
        cols = slice(i * n, (i + 1) * n)
        A_ub[3 * i, cols] = gpus
        A_ub[3 * i + 1, cols] = cpus
        A_ub[3 * i + 2, cols] = mem
        b_ub[3 * i] = 8.0 * max(1.0, float(gpus.sum()) / (8.0 * s))
        b_ub[3 * i + 1] = 24.0 * max(1.0, float(cpus.sum()) / (24.0 * s))
        b_ub[3 * i + 2] = 500.0 * max(1.0, float(mem.sum()) / (500.0 * s))
    for j in range(n):
        for i in range(s):
            A_ub[3 * s + j, i * n + j] = -1.0
        b_ub[3 * s + j] = -1.0
    return np.zeros(nv), A_ub, b_ub, False


def dense_system(rng, m, n):
    """Random bounded max problem: nonnegative rows keep it feasible at 0."""
    A_ub = rng.uniform(0.0, 1.0, size=(m, n))
    b_ub = rng.uniform(1.0, 2.0, size=m) * n / 4.0
    c = rng.uniform(0.0, 1.0, size=n)
    return c, A_ub, b_ub, True


CASES = [
    ("placement s=2 n=8", placement_system, (2, 8), 200),
    ("placement s=4 n=16", placement_system, (4, 16), 100),
    ("placement s=8 n=32", placement_system, (8, 32), 30),
    ("dense 20x40", dense_system, (20, 40), 200),
    ("dense 60x120", dense_system, (60, 120), 40),
    ("dense 120x240", dense_system, (120, 240), 10),
]


def run_backend() -> dict:
    from synsim import lp

    t0 = time.perf_counter()
    lp.warmup()
    compile_s = time.perf_counter() - t0

    out = {"backend": lp.backend_name(), "compile_s": compile_s, "cases": []}
    for name, builder, shape, reps in CASES:
        rng = np.random.default_rng(4242)
        systems = [builder(rng, *shape) for _ in range(reps)]
        iters = 0
        obj_sum = 0.0
        t0 = time.perf_counter()
        for c, A_ub, b_ub, maximize in systems:
            r = lp.solve_lp(c, A_ub=A_ub, b_ub=b_ub, maximize=maximize)
            assert r.status == lp.OPTIMAL, name
            iters += r.iterations
            obj_sum += r.objective
        elapsed = time.perf_counter() - t0
        out["cases"].append(
            {
                "name": name,
                "solves": reps,
                "total_s": elapsed,
                "iterations": iters,
                "objective_sum": obj_sum,
            }
        )
    return out


def spawn(backend: str) -> dict:
    env = dict(os.environ)
    if backend == "numpy":
        env["SYNSIM_PURE_NUMPY"] = "1"
    else:
        env.pop("SYNSIM_PURE_NUMPY", None)
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--backend", backend],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    result = json.loads(proc.stdout)
    if result["backend"] != backend:
        raise RuntimeError(
            f"asked for {backend}, got {result['backend']}; is numba installed?"
        )
    return result


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--backend", choices=("numba", "numpy"))
    args = ap.parse_args()

    if args.backend:
        json.dump(run_backend(), sys.stdout)
        return 0

    nb = spawn("numba")
    np_ = spawn("numpy")

    print(f"{'case':<22} {'solves':>6} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for a, b in zip(nb["cases"], np_["cases"]):
        if a["iterations"] != b["iterations"]:
            raise SystemExit(
                f"{a['name']}: kernels diverged "
                f"({a['iterations']} vs {b['iterations']} pivots)"
            )
        if abs(a["objective_sum"] - b["objective_sum"]) > 1e-9:
            raise SystemExit(f"{a['name']}: objective mismatch")
        speedup = b["total_s"] / a["total_s"]
        print(
            f"{a['name']:<22} {a['solves']:>6} {a['total_s']:>9.3f}s"
            f" {b['total_s']:>9.3f}s {speedup:>7.1f}x"
        )
    print(
        f"\npivot sequences identical across backends; "
        f"jit warmup {nb['compile_s']:.2f}s (numba) vs {np_['compile_s']:.3f}s (numpy)"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
