"""Exact planning with a known model.

All functions take a :class:`~rlworkbench.envs.TabularMDP`. Terminal states
always carry value 0. Greedy extraction uses lowest-index tie-breaking.
"""
from __future__ import annotations

import numpy as np

from .envs import TabularMDP
from .rng import make_stream

__all__ = [
    "q_from_v",
    "bellman_backup",
    "bellman_expectation",
    "greedy_policy",
    "value_iteration",
    "policy_evaluation_exact",
    "policy_evaluation_iterative",
    "policy_iteration",
    "rtdp",
    "reachable_states",
    "ConvergenceError",
    "DIRECT_SOLVE_MAX_STATES",
]

DIRECT_SOLVE_MAX_STATES = 512


class ConvergenceError(RuntimeError):
    pass


def _check_v(V, mdp):
    V = np.asarray(V, dtype=float)
    if V.shape != (mdp.n_states,):
        raise ValueError(f"V must have shape ({mdp.n_states},), got {V.shape}")
    return V


def q_from_v(V, mdp: TabularMDP, gamma: float) -> np.ndarray:
    """Q(s,a) = R(s,a) + gamma sum_s' T(s'|s,a) V(s'), zero on terminals."""
    V = _check_v(V, mdp)
    Q = mdp.expected_reward() + gamma * mdp.trans @ V
    Q[mdp.terminal] = 0.0
    return Q


def bellman_backup(V, mdp: TabularMDP, gamma: float) -> np.ndarray:
    """One application of the Bellman optimality operator."""
    return q_from_v(V, mdp, gamma).max(axis=1)


def bellman_expectation(V, mdp: TabularMDP, policy, gamma: float) -> np.ndarray:
    """One application of the evaluation operator for ``policy``."""
    Q = q_from_v(V, mdp, gamma)
    return np.sum(np.asarray(policy) * Q, axis=1)


def greedy_policy(Q) -> np.ndarray:
    """Deterministic policy table (one-hot rows) that is greedy in ``Q``."""
    Q = np.asarray(Q)
    pi = np.zeros_like(Q, dtype=float)
    pi[np.arange(Q.shape[0]), np.argmax(Q, axis=1)] = 1.0
    return pi


def value_iteration(mdp: TabularMDP, gamma: float, tol: float = 1e-10,
                    max_sweeps: int = 100_000, V0=None, history: bool = False):
    """Iterate the optimality operator until successive sweeps differ by ``tol``.

    Returns
    -------
    V : ndarray (S,)
    Q : ndarray (S, A)
    policy : ndarray (S, A)
        Greedy one-hot policy.
    trace : list of ndarray, only when ``history=True``
        Every iterate, starting with ``V0``.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    V = np.zeros(mdp.n_states) if V0 is None else _check_v(V0, mdp).copy()
    trace = [V.copy()] if history else None
    for _ in range(max_sweeps):
        V_new = bellman_backup(V, mdp, gamma)
        if history:
            trace.append(V_new.copy())
        delta = np.max(np.abs(V_new - V)) if V.size else 0.0
        V = V_new
        if delta <= tol:
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_sweeps} sweeps")
    Q = q_from_v(V, mdp, gamma)
    out = (V, Q, greedy_policy(Q))
    return out + (trace,) if history else out


def policy_evaluation_exact(mdp: TabularMDP, policy, gamma: float,
                            residual_tol: float = 1e-10) -> np.ndarray:
    """Solve ``(I - gamma T_pi) v = r_pi``.

    Uses a dense direct solve up to :data:`DIRECT_SOLVE_MAX_STATES` states and
    falls back to iterative evaluation beyond that.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("exact evaluation needs gamma in [0, 1)")
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape mismatch")
    if mdp.n_states > DIRECT_SOLVE_MAX_STATES:
        return policy_evaluation_iterative(mdp, policy, gamma, tol=residual_tol * (1 - gamma))
    T_pi, r_pi = mdp.policy_model(policy)
    r_pi[mdp.terminal] = 0.0
    A = np.eye(mdp.n_states) - gamma * T_pi
    try:
        v = np.linalg.solve(A, r_pi)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("singular evaluation system") from exc
    v[mdp.terminal] = 0.0
    # one refinement step keeps the residual at machine level for large 1/(1-gamma)
    res = r_pi + gamma * T_pi @ v - v
    v = v + np.linalg.solve(A, res)
    v[mdp.terminal] = 0.0
    res = np.max(np.abs(r_pi + gamma * T_pi @ v - v)) if v.size else 0.0
    if res > residual_tol * max(1.0, np.max(np.abs(v))):
        raise ConvergenceError(f"evaluation residual {res:.3e} exceeds tolerance")
    return v


def policy_evaluation_iterative(mdp: TabularMDP, policy, gamma: float, tol: float = 1e-12,
                                max_sweeps: int = 1_000_000) -> np.ndarray:
    """Iterate ``v <- r_pi + gamma T_pi v`` until the sweep change is below ``tol``."""
    T_pi, r_pi = mdp.policy_model(policy)
    r_pi[mdp.terminal] = 0.0
    live = ~mdp.terminal
    v = np.zeros(mdp.n_states)
    for _ in range(max_sweeps):
        v_new = (r_pi + gamma * T_pi @ v) * live
        if np.max(np.abs(v_new - v)) <= tol:
            return v_new
        v = v_new
    raise ConvergenceError("iterative evaluation did not converge")


def policy_iteration(mdp: TabularMDP, gamma: float, init_policy=None,
                     max_iters: int = 10_000, return_trace: bool = False):
    """Alternate exact evaluation and greedy improvement.

    Improvement keeps the current action whenever it still attains the
    maximum (up to 1e-12 relative slack). Otherwise it switches to the
    lowest-index maximizer. This prevents cycling between tied policies.

    Returns ``(V, policy)`` and, with ``return_trace``, the list of value
    vectors of every evaluated policy.
    """
    S, A = mdp.n_states, mdp.n_actions
    if init_policy is None:
        act = np.zeros(S, dtype=int)
    else:
        act = np.argmax(np.asarray(init_policy), axis=1)
    trace = []
    seen = set()
    for _ in range(max_iters):
        pi = np.zeros((S, A))
        pi[np.arange(S), act] = 1.0
        V = policy_evaluation_exact(mdp, pi, gamma)
        trace.append(V)
        Q = q_from_v(V, mdp, gamma)
        best = np.argmax(Q, axis=1)
        qmax = Q[np.arange(S), best]
        slack = 1e-12 * np.maximum(1.0, np.abs(qmax))
        keep = Q[np.arange(S), act] >= qmax - slack
        new_act = np.where(keep, act, best)
        if np.array_equal(new_act, act):
            return (V, pi, trace) if return_trace else (V, pi)
        key = new_act.tobytes()
        if key in seen:
            raise ConvergenceError("policy iteration cycled")
        seen.add(key)
        act = new_act
    raise ConvergenceError("policy iteration exceeded max_iters")


def reachable_states(mdp: TabularMDP, start: int, policy=None) -> np.ndarray:
    """Boolean mask of states reachable from ``start``.

    With ``policy`` given, only transitions of actions with positive
    probability under it count.
    """
    if policy is None:
        adj = mdp.trans.sum(axis=1) > 0
    else:
        adj = np.einsum("sa,sat->st", (np.asarray(policy) > 0).astype(float), mdp.trans) > 0
    seen = np.zeros(mdp.n_states, dtype=bool)
    stack = [int(start)]
    seen[start] = True
    while stack:
        s = stack.pop()
        for t in np.flatnonzero(adj[s]):
            if not seen[t]:
                seen[t] = True
                stack.append(int(t))
    return seen


def rtdp(mdp: TabularMDP, start: int, episodes: int, gamma: float, explore: float = 0.0,
         max_steps: int = 100, rng: np.random.Generator | None = None, V0=None) -> np.ndarray:
    """Real-time dynamic programming from a fixed start state.

    Each trial walks from ``start``. At every visited state it performs a
    full Bellman backup, then acts greedily (with probability ``explore`` it
    acts uniformly at random) and samples the successor from the model.
    Trials end at a terminal state or after ``max_steps`` steps.

    ``V0`` defaults to the optimistic bound max R / (1 - gamma), which makes
    greedy trials converge on the states the optimal policy reaches.
    """
    if rng is None:
        rng = make_stream(0, 0, "rtdp")
    Rsa = mdp.expected_reward()
    if V0 is None:
        rmax = max(float(Rsa.max(initial=0.0)), 0.0)
        V = np.full(mdp.n_states, rmax / (1.0 - gamma) if gamma < 1 else rmax * max_steps)
    else:
        V = _check_v(V0, mdp).copy()
    V[mdp.terminal] = 0.0
    cdf = np.cumsum(mdp.trans, axis=2)
    term = mdp.terminal
    A = mdp.n_actions
    for _ in range(episodes):
        s = int(start)
        for _ in range(max_steps):
            if term[s]:
                break
            q = Rsa[s] + gamma * mdp.trans[s] @ V
            V[s] = q.max()
            if explore > 0.0 and rng.random() < explore:
                a = int(rng.integers(A))
            else:
                a = int(np.argmax(q))
            s = min(int(np.searchsorted(cdf[s, a], rng.random(), side="right")), mdp.n_states - 1)
    return V

