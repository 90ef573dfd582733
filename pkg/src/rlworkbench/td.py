"""Model-free tabular prediction and control.

Update functions return new arrays and never modify their inputs, except
where noted (``*_inplace`` helpers used by the hot loops). Terminal states
never appear as the source state of an update, so their rows stay at 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bandits import epsilon_greedy
from .envs import TabularEnv, TabularMDP, Trajectory, Transition
from .rng import make_stream

__all__ = [
    "mc_update",
    "td0_update",
    "nstep_return",
    "lambda_return",
    "EligibilityTrace",
    "td_lambda_step",
    "td_lambda_episode",
    "sarsa_step",
    "q_learning_step",
    "double_q_step",
    "dyna_q",
    "DynaResult",
    "tabular_control",
    "ControlResult",
    "power_lr",
]


def power_lr(n, power: float = 0.8):
    """Robbins-Monro step size 1 / n**power for visit count ``n`` >= 1."""
    return 1.0 / n ** power


def mc_update(V, trajectory: Trajectory, eta: float, gamma: float, first_visit: bool = True):
    """Monte Carlo update toward observed discounted returns."""
    if len(trajectory) == 0 or not trajectory[-1].done:
        raise ValueError("Monte Carlo update needs a terminated trajectory")
    V = np.array(V, dtype=float)
    r = trajectory.rewards
    G = np.zeros(len(r))
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        G[t] = acc
    states = trajectory.states
    seen = set()
    for t, s in enumerate(states):
        if first_visit:
            if s in seen:
                continue
            seen.add(s)
        V[s] += eta * (G[t] - V[s])
    return V


def td0_update(V, transition: Transition, eta: float, gamma: float):
    """V(s) += eta * (r + gamma (1 - done) V(s') - V(s))."""
    V = np.array(V, dtype=float)
    s, _, r, s2, done = transition
    delta = r + (0.0 if done else gamma * V[s2]) - V[s]
    V[s] += eta * delta
    return V


def nstep_return(rewards, bootstrap: float, n: int, gamma: float, dones=None) -> float:
    """G_{t:t+n} = sum_{k<n} gamma^k r_{t+k} + gamma^n (1 - done) V(s_{t+n}).

    The sum stops at the first done flag, in which case nothing is
    bootstrapped. ``rewards`` may be shorter than ``n`` only if it ends in a
    done step.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rewards = np.asarray(rewards, dtype=float)
    dones = np.zeros(len(rewards), dtype=bool) if dones is None else np.asarray(dones, dtype=bool)
    G = 0.0
    disc = 1.0
    for k in range(n):
        if k >= len(rewards):
            raise ValueError("n exceeds the available transitions of an unfinished episode")
        G += disc * rewards[k]
        disc *= gamma
        if dones[k]:
            return G
    return G + disc * bootstrap


def lambda_return(trajectory: Trajectory, V, lam: float, gamma: float) -> np.ndarray:
    """Per-step lambda-returns by the backward recursion.

    G_t = r_t + gamma * [(1 - lam) V(s_{t+1}) + lam G_{t+1}], where past the
    end of the trajectory G is V(s_T) for a truncated episode and 0 after a
    terminal step.
    """
    V = np.asarray(V, dtype=float)
    T = len(trajectory)
    out = np.zeros(T)
    last = trajectory[T - 1]
    g_next = 0.0 if last.done else V[last.s_next]
    for t in range(T - 1, -1, -1):
        tr = trajectory[t]
        v_next = 0.0 if tr.done else V[tr.s_next]
        g = tr.r + gamma * ((1.0 - lam) * v_next + lam * g_next)
        out[t] = g
        g_next = g
    return out


@dataclass
class EligibilityTrace:
    """Accumulating trace over states. Call :meth:`reset` at episode start."""

    z: np.ndarray

    @classmethod
    def zeros(cls, n_states: int) -> "EligibilityTrace":
        return cls(np.zeros(n_states))

    def reset(self) -> "EligibilityTrace":
        return EligibilityTrace(np.zeros_like(self.z))


def td_lambda_step(V, trace: EligibilityTrace, transition: Transition, eta: float,
                   gamma: float, lam: float):
    """Backward-view TD(lambda) with accumulating tabular traces.

    Returns ``(V, trace)``. The caller resets the trace at episode starts.
    """
    V = np.array(V, dtype=float)
    s, _, r, s2, done = transition
    z = gamma * lam * trace.z
    z[s] += 1.0
    delta = r + (0.0 if done else gamma * V[s2]) - V[s]
    V += eta * delta * z
    return V, EligibilityTrace(z)


def td_lambda_episode(V, trajectory: Trajectory, eta: float, gamma: float, lam: float,
                      online: bool = True):
    """Run TD(lambda) over one episode.

    With ``online=False`` the increments are accumulated against the
    episode-start values and applied at the end (offline TD(lambda)).
    """
    V = np.array(V, dtype=float)
    trace = EligibilityTrace.zeros(V.shape[0])
    if online:
        for tr in trajectory:
            V, trace = td_lambda_step(V, trace, tr, eta, gamma, lam)
        return V
    V0 = V.copy()
    inc = np.zeros_like(V)
    for tr in trajectory:
        s, _, r, s2, done = tr
        z = gamma * lam * trace.z
        z[s] += 1.0
        trace = EligibilityTrace(z)
        delta = r + (0.0 if done else gamma * V0[s2]) - V0[s]
        inc += eta * delta * z
    return V0 + inc


def sarsa_step(Q, sarsa_tuple, eta: float, gamma: float):
    """Q(s,a) += eta [r + gamma (1 - done) Q(s', a') - Q(s,a)]."""
    s, a, r, s2, a2, done = sarsa_tuple
    Q = np.array(Q, dtype=float)
    target = r + (0.0 if done else gamma * Q[s2, a2])
    Q[s, a] += eta * (target - Q[s, a])
    return Q


def q_learning_step(Q, transition: Transition, eta: float, gamma: float):
    """Q(s,a) += eta [r + gamma (1 - done) max_a' Q(s', a') - Q(s,a)]."""
    Q = np.array(Q, dtype=float)
    _q_inplace(Q, transition, eta, gamma)
    return Q


def _q_inplace(Q, transition, eta, gamma):
    s, a, r, s2, done = transition
    target = r + (0.0 if done else gamma * Q[s2].max())
    Q[s, a] += eta * (target - Q[s, a])


def double_q_step(Q1, Q2, transition: Transition, eta: float, gamma: float, rng,
                  update_both: bool = False):
    """Double Q-learning update.

    The table being updated, Q_i, evaluates the action that the other
    table Q_{-i} selects at s'. By default a fair coin picks which table to
    update. With ``update_both`` both are updated from the same sample.
    """
    Q1 = np.array(Q1, dtype=float)
    Q2 = np.array(Q2, dtype=float)
    if update_both:
        _double_inplace(Q1, Q2, transition, eta, gamma)
        _double_inplace(Q2, Q1, transition, eta, gamma)
    elif rng.random() < 0.5:
        _double_inplace(Q1, Q2, transition, eta, gamma)
    else:
        _double_inplace(Q2, Q1, transition, eta, gamma)
    return Q1, Q2


def _double_inplace(Qi, Qo, transition, eta, gamma):
    s, a, r, s2, done = transition
    if done:
        target = r
    else:
        target = r + gamma * Qi[s2, int(np.argmax(Qo[s2]))]
    Qi[s, a] += eta * (target - Qi[s, a])


@dataclass
class DynaResult:
    Q: np.ndarray
    model: dict
    errors: np.ndarray | None


def dyna_q(env, n_states: int, n_actions: int, n_planning: int, eta: float, gamma: float,
           epsilon: float, steps: int, rng, Q_ref=None) -> DynaResult:
    """Tabular Dyna-Q on a deterministic environment.

    Each real step does one Q-learning update, stores ``model[(s, a)] =
    (s', r, done)`` and then replays ``n_planning`` updates on pairs drawn
    uniformly from the visited set. When ``Q_ref`` is given, the sup-norm
    error against it is recorded after every real step.
    """
    Q = np.zeros((n_states, n_actions))
    model: dict = {}
    visited: list = []
    errs = np.empty(steps) if Q_ref is not None else None
    s = env.reset()
    for t in range(steps):
        a = epsilon_greedy(Q[s], epsilon, rng)
        s2, r, done = env.step(a)
        _q_inplace(Q, (s, a, r, s2, done), eta, gamma)
        if (s, a) not in model:
            visited.append((s, a))
        model[(s, a)] = (s2, r, done)
        for _ in range(n_planning):
            ps, pa = visited[int(rng.integers(len(visited)))]
            ps2, pr, pdone = model[(ps, pa)]
            _q_inplace(Q, (ps, pa, pr, ps2, pdone), eta, gamma)
        if errs is not None:
            errs[t] = np.max(np.abs(Q - Q_ref))
        s = env.reset() if done else s2
    return DynaResult(Q, model, errs)


@dataclass
class ControlResult:
    Q: np.ndarray
    episode_returns: np.ndarray
    episode_ends: np.ndarray


def tabular_control(mdp: TabularMDP, algo: str, steps: int, gamma: float, seed: int,
                    epsilon: float = 0.1, glie: bool = False, lr_power: float = 0.8,
                    lr_const: float | None = None, horizon: int = 100,
                    run_id: int = 0, glie_power: float = 1.0) -> ControlResult:
    """Q-learning or SARSA with epsilon-greedy behavior on a tabular MDP.

    Parameters
    ----------
    algo : {"q_learning", "sarsa"}
    glie : bool
        Use epsilon_k = epsilon / k**glie_power for episode k (k starts at 1).
    glie_power : float
        Decay exponent of the GLIE schedule; any value in (0, 1] keeps
        exploration infinite while epsilon_k -> 0.
    lr_const : float, optional
        Constant step size. Otherwise 1 / N(s,a)**lr_power.
    horizon : int
        Episodes are cut (without termination) after this many steps.

    The pure-Python loop here is the reference for the compiled kernel in
    :mod:`rlworkbench._kernels`, which uses the same random stream.
    """
    from . import _kernels

    return _kernels.tabular_control(mdp, algo, steps, gamma, seed, epsilon, glie, lr_power,
                                      lr_const, horizon, run_id, glie_power=glie_power)


def _tabular_control_py(mdp: TabularMDP, algo: str, steps: int, gamma: float, rng,
                        epsilon: float, glie: bool, lr_power: float, lr_const,
                        horizon: int, glie_power: float = 1.0) -> ControlResult:
    if algo not in ("q_learning", "sarsa"):
        raise ValueError(f"unknown algo {algo!r}")
    S, A = mdp.n_states, mdp.n_actions
    env = TabularEnv(mdp, rng)
    Q = np.zeros((S, A))
    N = np.zeros((S, A))
    returns, ends = [], []
    k = 1
    eps = epsilon
    s = env.reset()
    a = epsilon_greedy(Q[s], eps, rng)
    ret, disc, t_ep = 0.0, 1.0, 0
    for t in range(steps):
        s2, r, done = env.step(a)
        ret += disc * r
        disc *= gamma
        t_ep += 1
        N[s, a] += 1.0
        eta = lr_const if lr_const is not None else power_lr(N[s, a], lr_power)
        if algo == "q_learning":
            _q_inplace(Q, (s, a, r, s2, done), eta, gamma)
            a2 = -1
        else:
            a2 = -1 if done else epsilon_greedy(Q[s2], eps, rng)
            target = r + (0.0 if done else gamma * Q[s2, a2])
            Q[s, a] += eta * (target - Q[s, a])
        if done or t_ep >= horizon:
            returns.append(ret)
            ends.append(t + 1)
            k += 1
            if glie:
                eps = epsilon / k ** glie_power
            s = env.reset()
            a = epsilon_greedy(Q[s], eps, rng)
            ret, disc, t_ep = 0.0, 1.0, 0
        else:
            s = s2
            a = a2 if algo == "sarsa" else epsilon_greedy(Q[s], eps, rng)
    return ControlResult(Q, np.array(returns), np.array(ends, dtype=np.int64))
