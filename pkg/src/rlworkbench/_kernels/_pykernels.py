"""Pure-Python kernels. They are built from the public update rules and
consume a :class:`~rlworkbench.rng.SplitMix64` stream in the same order as
the compiled versions, so both backends return identical arrays."""
from __future__ import annotations

import numpy as np

from ..bandits import BetaBelief, epsilon_greedy, thompson_action, ucb_action, update_beta
from ..envs import MaxBiasEnv
from ..rng import SplitMix64
from ..td import _tabular_control_py, double_q_step, q_learning_step

BANDIT_ALGOS = {"epsilon_greedy": 0, "ucb": 1, "thompson": 2}


def bandit_simulate(algo: str, means, T: int, seed: int, param: float):
    """Bernoulli bandit run. Returns ``(arms, rewards)``.

    ``param`` is epsilon for epsilon-greedy and c for UCB (unused for
    Thompson sampling).
    """
    means = np.asarray(means, dtype=float)
    K = means.shape[0]
    rng = SplitMix64(seed)
    counts = np.zeros(K)
    sums = np.zeros(K)
    belief = BetaBelief.uniform(K)
    arms = np.empty(T, dtype=np.int64)
    rewards = np.empty(T)
    for t in range(T):
        est = np.divide(sums, counts, out=np.zeros(K), where=counts > 0)
        if algo == "epsilon_greedy":
            a = epsilon_greedy(est, param, rng)
        elif algo == "ucb":
            a = ucb_action(counts, est, param)
        elif algo == "thompson":
            a = thompson_action(belief, rng)
        else:
            raise ValueError(f"unknown bandit algo {algo!r}")
        r = 1.0 if rng.random() < means[a] else 0.0
        counts[a] += 1.0
        sums[a] += r
        if algo == "thompson":
            belief = update_beta(belief, a, int(r))
        arms[t] = a
        rewards[t] = r
    return arms, rewards


def _maxbias_tables(n_b: int):
    W = max(2, n_b)
    Q = np.zeros((3, W))
    Q[MaxBiasEnv.A, 2:] = -np.inf
    Q[MaxBiasEnv.B, n_b:] = -np.inf
    return Q


def maxbias_runs(method: str, n_runs: int, n_episodes: int, epsilon: float, eta: float,
                 gamma: float, n_b: int, mean: float, std: float, seed: int):
    """Left-action indicators from A, shape ``(n_runs, n_episodes)`` (uint8),
    plus ``max_a Q(B, a)`` at the end of every episode (float, same shape).

    ``method`` is ``"q"`` or ``"double"``. Double Q acts on (Q1 + Q2) / 2
    and reports the max of the same average.
    """
    left = np.zeros((n_runs, n_episodes), dtype=np.uint8)
    qb = np.zeros((n_runs, n_episodes))
    seeder = SplitMix64(seed)
    A, B = MaxBiasEnv.A, MaxBiasEnv.B
    for run in range(n_runs):
        rng = SplitMix64(seeder.next_u64())
        env = MaxBiasEnv(n_b, mean, std, rng)
        Q1 = _maxbias_tables(n_b)
        Q2 = _maxbias_tables(n_b)
        for ep in range(n_episodes):
            s = env.reset()
            done = False
            while not done:
                if method == "q":
                    scores = Q1[s]
                else:
                    scores = 0.5 * (Q1[s] + Q2[s])
                n_valid = 2 if s == A else n_b
                a = epsilon_greedy(scores[:n_valid], epsilon, rng)
                if s == A and a == MaxBiasEnv.LEFT:
                    left[run, ep] = 1
                s2, r, done = env.step(a)
                tr = (s, a, r, s2, done)
                if method == "q":
                    Q1 = q_learning_step(Q1, tr, eta, gamma)
                else:
                    Q1, Q2 = double_q_step(Q1, Q2, tr, eta, gamma, rng)
                s = s2
            if method == "q":
                qb[run, ep] = Q1[B, :n_b].max()
            else:
                qb[run, ep] = (0.5 * (Q1[B, :n_b] + Q2[B, :n_b])).max()
    return left, qb


def tabular_control(mdp, algo, steps, gamma, seed, epsilon, glie, lr_power, lr_const, horizon,
                    glie_power=1.0):
    rng = SplitMix64(seed)
    return _tabular_control_py(mdp, algo, steps, gamma, rng, epsilon, glie, lr_power,
                               lr_const, horizon, glie_power)
