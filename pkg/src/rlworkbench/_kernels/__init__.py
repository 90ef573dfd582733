"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports. Setting
``RLWORKBENCH_PURE_PYTHON=1`` forces the fallback. Every public function
also takes ``backend="cython" | "python"`` to pick one explicitly. Both
backends consume the same SplitMix64 stream and return identical arrays.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:  # pragma: no cover - depends on the build
    if os.environ.get("RLWORKBENCH_PURE_PYTHON", "") in ("1", "true", "yes"):
        raise ImportError("pure Python forced by environment")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"

__all__ = ["BACKEND", "available_backends", "stream_seed", "bandit_simulate",
           "maxbias_runs", "tabular_control"]


def available_backends() -> list:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def stream_seed(seed: int, run_id: int = 0, tag: str = "kernel") -> int:
    """64-bit SplitMix64 seed derived from ``(seed, run_id, tag)``."""
    from ..rng import tag_to_int

    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(run_id), tag_to_int(tag)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _pick(backend):
    b = backend or BACKEND
    if b == "cython" and _ckernels is None:
        raise RuntimeError("compiled kernels are not built")
    if b not in ("cython", "python"):
        raise ValueError(f"unknown backend {b!r}")
    return b


def bandit_simulate(algo: str, means, T: int, seed: int, param: float = 0.1,
                    run_id: int = 0, backend: str | None = None):
    """Simulate one Bernoulli bandit run of ``T`` pulls.

    Returns ``(arms, rewards)`` arrays of length ``T``.
    """
    if algo not in _pykernels.BANDIT_ALGOS:
        raise ValueError(f"unknown bandit algo {algo!r}")
    s64 = stream_seed(seed, run_id, "bandit")
    means = np.ascontiguousarray(means, dtype=float)
    if _pick(backend) == "cython":
        return _ckernels.bandit_simulate(_pykernels.BANDIT_ALGOS[algo], means, int(T), s64,
                                         float(param))
    return _pykernels.bandit_simulate(algo, means, int(T), s64, float(param))


def maxbias_runs(method: str, n_runs: int = 1000, n_episodes: int = 300, epsilon: float = 0.1,
                 eta: float = 0.1, gamma: float = 1.0, n_b: int = 10, mean: float = -0.1,
                 std: float = 1.0, seed: int = 0, backend: str | None = None):
    """Q-learning or double Q-learning on the maximization-bias task.

    Returns ``(left, q_b)``: left-from-A indicators and end-of-episode
    ``max_a Q(B, a)``, both of shape ``(n_runs, n_episodes)``.
    """
    if method not in ("q", "double"):
        raise ValueError("method must be 'q' or 'double'")
    s64 = stream_seed(seed, 0, "maxbias-" + method)
    if _pick(backend) == "cython":
        return _ckernels.maxbias_runs(0 if method == "q" else 1, n_runs, n_episodes, epsilon,
                                      eta, gamma, n_b, mean, std, s64)
    return _pykernels.maxbias_runs(method, n_runs, n_episodes, epsilon, eta, gamma, n_b,
                                   mean, std, s64)


def tabular_control(mdp, algo, steps, gamma, seed, epsilon=0.1, glie=False, lr_power=0.8,
                    lr_const=None, horizon=100, run_id=0, backend=None, glie_power=1.0):
    from ..td import ControlResult

    if algo not in ("q_learning", "sarsa"):
        raise ValueError(f"unknown algo {algo!r}")
    s64 = stream_seed(seed, run_id, "control")
    if _pick(backend) == "cython":
        Q, rets, ends = _ckernels.tabular_control(
            0 if algo == "q_learning" else 1,
            np.ascontiguousarray(np.cumsum(mdp.trans, axis=2)),
            np.ascontiguousarray(mdp.reward),
            np.ascontiguousarray(mdp.terminal, dtype=np.uint8),
            np.ascontiguousarray(np.cumsum(mdp.init_dist)),
            int(steps), float(gamma), s64, float(epsilon), bool(glie), float(lr_power),
            float(lr_const) if lr_const is not None else 0.0, lr_const is not None,
            int(horizon), float(glie_power))
        return ControlResult(Q, rets, ends)
    return _pykernels.tabular_control(mdp, algo, steps, gamma, s64, epsilon, glie, lr_power,
                                      lr_const, horizon, glie_power)
