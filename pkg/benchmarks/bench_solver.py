"""Time the agent solver with and without numba.

Runs itself twice in subprocesses (``DMPC_LAB_NUMBA=1`` and ``=0``) so each
backend is imported cleanly, then prints per-solve timings and the speedup.

    python3 benchmarks/bench_solver.py [--instances 200] [--repeat 3]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np


def _worker(n_instances: int, repeat: int) -> dict:
    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
    import grid_oracle
    from dmpc_lab import _accel, scenario
    from dmpc_lab.dmpc import solve
    from dmpc_lab.engine import run

    rng = np.random.default_rng(0)
    problems = [grid_oracle.to_problem(grid_oracle.random_instance(rng)) for _ in range(n_instances)]
    solve(problems[0])  # compile / warm caches outside the timed region

    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for p in problems:
            solve(p)
        best = min(best, time.perf_counter() - t0)

    cfg = scenario.packaged("ex2").with_overrides(T=30)
    t0 = time.perf_counter()
    run(cfg)
    run_time = time.perf_counter() - t0
    return {
        "backend": _accel.backend_name(),
        "per_solve_ms": 1e3 * best / n_instances,
        "ex2_T30_s": run_time,
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(_worker(args.instances, args.repeat)))
        return

    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, DMPC_LAB_NUMBA=flag)
        cmd = [sys.executable, __file__, "--worker", "--instances", str(args.instances), "--repeat", str(args.repeat)]
        out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True).stdout
        res = json.loads(out.strip().splitlines()[-1])
        results[res["backend"]] = res
        print(f"{res['backend']:>6}: {res['per_solve_ms']:.3f} ms/solve, ex2 T=30 run {res['ex2_T30_s']:.2f} s")
    if "numba" in results and "numpy" in results:
        ratio = results["numpy"]["per_solve_ms"] / results["numba"]["per_solve_ms"]
        print(f"speedup: {ratio:.1f}x")


if __name__ == "__main__":
    main()
