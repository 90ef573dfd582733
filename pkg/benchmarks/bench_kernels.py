"""Compare compiled and pure-Python kernels on identical workloads.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Each row
reports the best wall-clock time per backend, the speedup, and whether the
two backends returned bitwise-identical arrays.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from rlworkbench import _kernels
from rlworkbench.envs import make_gridworld_1d, make_random_mdp

WORKLOADS = {
    "bandit_simulate/thompson": lambda b: _kernels.bandit_simulate(
        "thompson", [0.5, 0.6], 20_000, 0, backend=b),
    "bandit_simulate/ucb": lambda b: _kernels.bandit_simulate(
        "ucb", [0.5, 0.6], 20_000, 0, 1.0, backend=b),
    "maxbias_runs/double": lambda b: _kernels.maxbias_runs(
        "double", n_runs=100, n_episodes=300, backend=b),
    "tabular_control/gridworld": lambda b: _kernels.tabular_control(
        make_gridworld_1d(), "q_learning", 20_000, 0.9, 0, backend=b),
    "tabular_control/random": lambda b: _kernels.tabular_control(
        make_random_mdp(20, 4, seed=0, n_terminal=1), "sarsa", 20_000, 0.9, 0, backend=b),
}


def _arrays(out):
    if hasattr(out, "Q"):
        return [out.Q, out.episode_returns, out.episode_ends]
    return list(out)


def best_time(fn, repeat: int) -> tuple:
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if "cython" not in _kernels.available_backends():
        print("compiled kernels are not built; only the Python backend is available")
        return 1
    print(f"{'workload':<28s} {'python s':>10s} {'cython s':>10s} {'speedup':>9s}  identical")
    for name, fn in WORKLOADS.items():
        tp, op = best_time(lambda: fn("python"), args.repeat)
        tc, oc = best_time(lambda: fn("cython"), args.repeat)
        same = all(np.array_equal(a, b) for a, b in zip(_arrays(op), _arrays(oc)))
        print(f"{name:<28s} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
