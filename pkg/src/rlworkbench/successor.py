"""Successor representations, successor features and generalized policy improvement.

The representation credits the *next* state: M(s, s~) = sum_t gamma^t
P(s_{t+1} = s~ | s_0 = s). Values synthesized from it are therefore exact
for rewards that depend on the state entered, R(s, a, s') = R(s').
:func:`value_from_sr_sa` covers general R(s, a, s') rewards through the
identity (I - gamma T)^-1 = I + gamma M.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .envs import TabularMDP, argmax

__all__ = [
    "SRMatrix",
    "SFTable",
    "sr_closed_form",
    "sr_td_update",
    "learn_sr_td",
    "value_from_sr",
    "value_from_sr_sa",
    "sf_closed_form",
    "sf_td_update",
    "gpi_action",
    "gpi_policy",
    "sr_to_csv",
]


@dataclass
class SRMatrix:
    """Successor representation of ``policy`` at discount ``gamma``."""

    M: np.ndarray
    gamma: float
    policy: np.ndarray | None = None


@dataclass
class SFTable:
    """Successor features psi(s, a, :) with cumulants phi(s) and task weights."""

    psi: np.ndarray
    phi: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        if self.psi.shape[-1] != self.phi.shape[-1]:
            raise ValueError("feature dimensions of psi and phi disagree")

    def q(self, w=None) -> np.ndarray:
        return self.psi @ np.asarray(self.w if w is None else w, dtype=float)


def sr_closed_form(mdp: TabularMDP, policy, gamma: float) -> SRMatrix:
    """M = T_pi (I - gamma T_pi)^-1 by a dense linear solve."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    policy = np.asarray(policy, dtype=float)
    T_pi, _ = mdp.policy_model(policy)
    n = mdp.n_states
    # T (I - gT)^-1 = (I - gT)^-1 T since the factors commute
    M = np.linalg.solve(np.eye(n) - gamma * T_pi, T_pi)
    return SRMatrix(M, gamma, policy)


def sr_td_update(M, s: int, s_next: int, eta: float, gamma: float) -> np.ndarray:
    """M(s, :) += eta [e_{s'} + gamma M(s', :) - M(s, :)]. Returns a new matrix."""
    M = np.array(M, dtype=float)
    target = gamma * M[s_next]
    target[s_next] += 1.0
    M[s] += eta * (target - M[s])
    return M


def learn_sr_td(mdp: TabularMDP, policy, gamma: float, steps: int, rng, lr_power: float = 1.0,
                n_chains: int = 1, M0=None, average_from: float | None = None) -> np.ndarray:
    """TD-learn the SR from on-policy experience.

    ``n_chains`` independent streams advance in lockstep, each started from
    the initial distribution. At every step the TD errors of all chains in
    state s are summed and row s moves by that sum over n(s)**lr_power,
    with n(s) the number of transitions seen from s so far. With one chain
    this is the plain sequential update with step size 1 / n(s)**lr_power.
    Absorbing states self-loop, so the streams continue through them.

    ``average_from`` in [0, 1) returns the running mean of the iterates
    after that fraction of the steps (iterate averaging) instead of the
    last iterate.
    """
    policy = np.asarray(policy, dtype=float)
    S = mdp.n_states
    M = np.zeros((S, S)) if M0 is None else np.array(M0, dtype=float)
    T_pi, _ = mdp.policy_model(policy)
    cdf = np.cumsum(T_pi, axis=1)
    s = np.minimum(np.searchsorted(np.cumsum(mdp.init_dist), rng.random(n_chains), side="right"),
                   S - 1)
    counts = np.zeros(S)
    eye = np.eye(S)
    start_avg = None if average_from is None else int(average_from * steps)
    M_avg, n_avg = np.zeros_like(M), 0
    for t in range(steps):
        s2 = np.minimum((rng.random(n_chains)[:, None] >= cdf[s]).sum(axis=1), S - 1)
        delta = eye[s2] + gamma * M[s2] - M[s]
        D = np.zeros((S, S))
        np.add.at(D, s, delta)
        c = np.bincount(s, minlength=S).astype(float)
        counts += c
        hit = c > 0
        if lr_power == 1.0:
            M[hit] += D[hit] / counts[hit, None]
        else:
            eta = np.minimum(1.0, c[hit] / counts[hit] ** lr_power) / c[hit]
            M[hit] += D[hit] * eta[:, None]
        s = s2
        if start_avg is not None and t >= start_avg:
            n_avg += 1
            M_avg += (M - M_avg) / n_avg
    return M_avg if start_avg is not None else M


def value_from_sr(M, reward) -> np.ndarray:
    """V(s) = sum_s~ M(s, s~) R(s~) for a next-state reward vector."""
    M = M.M if isinstance(M, SRMatrix) else np.asarray(M, dtype=float)
    reward = np.asarray(reward, dtype=float)
    if reward.shape != (M.shape[1],):
        raise ValueError("reward must be a vector over states")
    return M @ reward


def value_from_sr_sa(M, r_pi, gamma: float) -> np.ndarray:
    """V = r_pi + gamma M r_pi for the expected one-step reward r_pi(s)."""
    M = M.M if isinstance(M, SRMatrix) else np.asarray(M, dtype=float)
    r_pi = np.asarray(r_pi, dtype=float)
    return r_pi + gamma * M @ r_pi


def sf_closed_form(mdp: TabularMDP, policy, phi, gamma: float) -> SFTable:
    """psi(s,a) = sum_s' T(s,a,s') [phi(s') + gamma sum_a' pi(a'|s') psi(s',a')]."""
    policy = np.asarray(policy, dtype=float)
    phi = np.asarray(phi, dtype=float)
    S, A = mdp.n_states, mdp.n_actions
    P = np.einsum("xas,sb->xasb", mdp.trans, policy).reshape(S * A, S * A)
    rhs = np.einsum("xas,sd->xad", mdp.trans, phi).reshape(S * A, -1)
    psi = np.linalg.solve(np.eye(S * A) - gamma * P, rhs).reshape(S, A, -1)
    return SFTable(psi, phi)


def sf_td_update(psi, s: int, a: int, s_next: int, a_next: int, phi, eta: float, gamma: float,
                 done: bool = False) -> np.ndarray:
    """psi(s,a) += eta [phi(s') + gamma psi(s',a') - psi(s,a)]. Returns a new table.

    ``done`` drops the bootstrap term, matching SARSA's terminal handling.
    """
    psi = np.array(psi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != psi.shape[-1]:
        raise ValueError("feature dimension mismatch")
    target = phi[s_next] + (0.0 if done else gamma * psi[s_next, a_next])
    psi[s, a] += eta * (target - psi[s, a])
    return psi


def _psi_array(sf):
    return sf.psi if isinstance(sf, SFTable) else np.asarray(sf, dtype=float)


def gpi_action(library, w, s: int) -> int:
    """argmax_a max_i psi_i(s, a) . w with lowest-index tie-breaking."""
    if len(library) == 0:
        raise ValueError("GPI needs at least one policy in the library")
    w = np.asarray(w, dtype=float)
    q = np.max([_psi_array(sf)[s] @ w for sf in library], axis=0)
    return int(argmax(q))


def gpi_policy(library, w) -> np.ndarray:
    """Deterministic (S, A) policy table that acts by :func:`gpi_action` everywhere."""
    if len(library) == 0:
        raise ValueError("GPI needs at least one policy in the library")
    S, A = _psi_array(library[0]).shape[:2]
    pi = np.zeros((S, A))
    for s in range(S):
        pi[s, gpi_action(library, w, s)] = 1.0
    return pi


def sr_to_csv(M) -> str:
    """Heatmap rows ``s,s_tilde,value``."""
    M = M.M if isinstance(M, SRMatrix) else np.asarray(M, dtype=float)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["s", "s_tilde", "value"])
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            wr.writerow([i, j, repr(float(M[i, j]))])
    return buf.getvalue()
