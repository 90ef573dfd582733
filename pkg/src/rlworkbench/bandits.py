"""Exploration rules, bandit beliefs and regret bookkeeping.

Functions that need randomness take an ``rng`` argument and only use
``rng.random()``, ``rng.integers(n)``, ``rng.beta(a, b)`` and
``rng.standard_normal()``. A numpy ``Generator`` works, and so does
:class:`~rlworkbench.rng.SplitMix64`, which lets the compiled kernels
replay the exact same decisions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BetaBelief",
    "GaussBelief",
    "RegretLedger",
    "update_beta",
    "update_gauss",
    "boltzmann_policy",
    "epsilon_greedy",
    "epsilon_greedy_probs",
    "epsilon_z_greedy",
    "ucb_action",
    "thompson_action",
    "regret_step",
    "sample_discrete",
]


@dataclass(frozen=True)
class BetaBelief:
    """Independent Beta posteriors, one per Bernoulli arm.

    ``alpha`` counts successes (r=1) plus the prior pseudo-count and
    ``beta`` counts failures (r=0) plus the prior pseudo-count.
    """

    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def uniform(cls, n_arms: int) -> "BetaBelief":
        return cls(np.ones(n_arms), np.ones(n_arms))

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float)
        b = np.array(self.beta, dtype=float)
        if a.shape != b.shape or np.any(a <= 0) or np.any(b <= 0):
            raise ValueError("alpha and beta must be positive and equally shaped")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def n_arms(self) -> int:
        return self.alpha.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.alpha / (self.alpha + self.beta)


def update_beta(belief: BetaBelief, arm: int, r: int) -> BetaBelief:
    """Conjugate update after observing reward ``r`` in {0, 1} on ``arm``."""
    if not 0 <= arm < belief.n_arms:
        raise IndexError(f"unknown arm {arm}")
    if r not in (0, 1):
        raise ValueError("Bernoulli reward must be 0 or 1")
    a, b = belief.alpha.copy(), belief.beta.copy()
    if r == 1:
        a[arm] += 1.0
    else:
        b[arm] += 1.0
    return BetaBelief(a, b)


@dataclass
class GaussBelief:
    """Running count, mean and sum of squared deviations per arm (Welford)."""

    count: np.ndarray
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def empty(cls, n_arms: int) -> "GaussBelief":
        return cls(np.zeros(n_arms), np.zeros(n_arms), np.zeros(n_arms))

    @property
    def n_arms(self) -> int:
        return self.count.shape[0]

    def std_error(self) -> np.ndarray:
        """Standard error of the mean. Infinite until an arm has 2 samples."""
        out = np.full(self.n_arms, np.inf)
        ok = self.count >= 2
        var = self.m2[ok] / (self.count[ok] - 1.0)
        out[ok] = np.sqrt(var / self.count[ok])
        return out


def update_gauss(belief: GaussBelief, arm: int, r: float) -> GaussBelief:
    if not 0 <= arm < belief.n_arms:
        raise IndexError(f"unknown arm {arm}")
    n, mu, m2 = belief.count.copy(), belief.mean.copy(), belief.m2.copy()
    n[arm] += 1.0
    d = r - mu[arm]
    mu[arm] += d / n[arm]
    m2[arm] += d * (r - mu[arm])
    return GaussBelief(n, mu, m2)


def boltzmann_policy(scores, tau: float) -> np.ndarray:
    """Softmax of ``scores / tau`` with max subtraction."""
    if not tau > 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(scores, dtype=float) / tau
    if not np.all(np.isfinite(z)):
        raise ValueError("scores must be finite")
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


def epsilon_greedy_probs(scores, epsilon: float) -> np.ndarray:
    """Action distribution induced by :func:`epsilon_greedy`."""
    scores = np.asarray(scores, dtype=float)
    p = np.full(scores.shape[0], epsilon / scores.shape[0])
    p[int(np.argmax(scores))] += 1.0 - epsilon
    return p


def epsilon_greedy(scores, epsilon: float, rng) -> int:
    """Argmax with probability 1-epsilon, else a uniform action over all arms."""
    n = len(scores)
    if n == 0:
        raise ValueError("empty score vector")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(n))
    return int(np.argmax(scores))


def epsilon_z_greedy(scores, epsilon: float, z, state: tuple, rng) -> tuple:
    """Epsilon-greedy with temporally extended exploration.

    Parameters
    ----------
    z : callable or array
        Repeat-duration distribution over positive integers. A callable is
        called as ``z(rng)``. An array is a pmf over durations 1, 2, ...
    state : tuple (counter, stored_action)
        Remaining repeats of the stored exploratory action.

    Returns
    -------
    action, new_state
    """
    counter, stored = state
    if counter > 0:
        return int(stored), (counter - 1, stored)
    n = len(scores)
    if epsilon > 0.0 and rng.random() < epsilon:
        a = int(rng.integers(n))
        if callable(z):
            dur = int(z(rng))
        else:
            dur = 1 + sample_discrete(np.asarray(z, dtype=float), rng)
        if dur < 1:
            raise ValueError("repeat duration must be a positive integer")
        return a, (dur - 1, a)
    return int(np.argmax(scores)), (0, None)


def sample_discrete(p, rng) -> int:
    """Inverse-CDF draw from a probability vector using one uniform."""
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(cdf) - 1)


def ucb_action(counts, means, c: float = 1.0, stds=None) -> int:
    """Optimistic action choice.

    Count mode (``stds`` is None) scores ``means + c / sqrt(counts)``.
    Posterior mode scores ``means + c * stds``. Arms never pulled are chosen
    first, lowest index first.
    """
    counts = np.asarray(counts, dtype=float)
    means = np.asarray(means, dtype=float)
    unpulled = np.flatnonzero(counts <= 0)
    if unpulled.size:
        return int(unpulled[0])
    if stds is None:
        bonus = c / np.sqrt(counts)
    else:
        stds = np.asarray(stds, dtype=float)
        inf = np.flatnonzero(~np.isfinite(stds))
        if inf.size:
            return int(inf[0])
        bonus = c * stds
    return int(np.argmax(means + bonus))


def thompson_action(belief, rng) -> int:
    """Sample one mean per arm from the posterior and act greedily on it."""
    if isinstance(belief, BetaBelief):
        theta = rng.beta(belief.alpha, belief.beta)
    elif isinstance(belief, GaussBelief):
        se = belief.std_error()
        need = np.flatnonzero(~np.isfinite(se))
        if need.size:
            return int(need[0])
        theta = belief.mean + se * np.array([rng.standard_normal() for _ in range(belief.n_arms)])
    else:
        raise TypeError("belief must be BetaBelief or GaussBelief")
    return int(np.argmax(theta))


@dataclass
class RegretLedger:
    """Per-step chosen arms and expected rewards against the oracle."""

    arms: list = field(default_factory=list)
    optimal: list = field(default_factory=list)
    realized: list = field(default_factory=list)

    @property
    def per_step(self) -> np.ndarray:
        return np.asarray(self.optimal, dtype=float) - np.asarray(self.realized, dtype=float)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.per_step)

    @property
    def total(self) -> float:
        return float(self.per_step.sum())


def regret_step(ledger: RegretLedger, arm_means, arm: int) -> RegretLedger:
    """Record l_t = max_a mu(a) - mu(arm)."""
    mu = np.asarray(arm_means, dtype=float)
    ledger.arms.append(int(arm))
    ledger.optimal.append(float(mu.max()))
    ledger.realized.append(float(mu[arm]))
    return ledger
