"""Environments, trajectories and potential-based reward shaping.

States and actions are integer ids. A :class:`TabularMDP` stores the full
model ``trans[s, a, s']`` and ``reward[s, a, s']`` and is the ground truth for
every exact oracle in the package. :class:`TabularEnv` wraps a model as a
steppable handle, and :class:`MaxBiasEnv` is the one environment whose
rewards are genuinely stochastic.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .rng import make_stream

__all__ = [
    "TabularMDP",
    "Transition",
    "Trajectory",
    "TabularEnv",
    "MaxBiasEnv",
    "make_gridworld_1d",
    "make_baird",
    "make_maxbias",
    "make_random_mdp",
    "make_two_goal_grid",
    "shape_rewards",
    "rollout",
    "argmax",
    "GRID_UP",
    "GRID_DOWN",
]

GRID_UP = 0
GRID_DOWN = 1

_ROW_TOL = 1e-12


def argmax(x, axis=-1):
    """Lowest-index argmax (numpy already breaks ties this way)."""
    return np.argmax(np.asarray(x), axis=axis)


@dataclass(frozen=True)
class TabularMDP:
    """Explicit finite MDP.

    Attributes
    ----------
    trans : ndarray, shape (S, A, S)
        ``trans[s, a, s']`` is P(s'|s, a).
    reward : ndarray, shape (S, A, S)
        Expected reward R(s, a, s') for the transition.
    terminal : ndarray of bool, shape (S,)
        Absorbing states. They self-loop with reward 0.
    init_dist : ndarray, shape (S,)
        Start-state distribution.
    """

    trans: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray
    init_dist: np.ndarray
    state_names: tuple = field(default=())
    action_names: tuple = field(default=())

    def __post_init__(self):
        for name in ("trans", "reward", "terminal", "init_dist"):
            arr = np.array(getattr(self, name), dtype=bool if name == "terminal" else float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def n_states(self) -> int:
        return self.trans.shape[0]

    @property
    def n_actions(self) -> int:
        return self.trans.shape[1]

    def validate(self) -> None:
        S, A = self.trans.shape[:2]
        if self.trans.shape != (S, A, S) or self.reward.shape != (S, A, S):
            raise ValueError("trans and reward must both have shape (S, A, S)")
        if self.terminal.shape != (S,) or self.init_dist.shape != (S,):
            raise ValueError("terminal and init_dist must have shape (S,)")
        if np.any(self.trans < 0):
            raise ValueError("negative transition probability")
        if np.max(np.abs(self.trans.sum(axis=2) - 1.0)) > _ROW_TOL:
            raise ValueError("transition rows must sum to 1")
        if abs(self.init_dist.sum() - 1.0) > _ROW_TOL or np.any(self.init_dist < 0):
            raise ValueError("init_dist must be a probability vector")
        for s in np.flatnonzero(self.terminal):
            if not np.all(self.trans[s, :, s] == 1.0) or np.any(self.reward[s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with reward 0")

    def expected_reward(self) -> np.ndarray:
        """R(s, a) = sum_s' T(s'|s, a) R(s, a, s')."""
        return np.einsum("ijk,ijk->ij", self.trans, self.reward)

    def policy_model(self, policy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(T_pi, r_pi)`` for a stochastic policy of shape (S, A)."""
        policy = np.asarray(policy, dtype=float)
        T_pi = np.einsum("sa,sat->st", policy, self.trans)
        r_pi = np.einsum("sa,sa->s", policy, self.expected_reward())
        return T_pi, r_pi

    # serialization -------------------------------------------------------
    def to_json(self) -> str:
        """JSON text: shapes plus row-major flattened tensors."""
        S, A = self.n_states, self.n_actions
        doc = {
            "schema": "tabular-mdp/1",
            "n_states": S,
            "n_actions": A,
            "states": list(self.state_names) or [str(i) for i in range(S)],
            "actions": list(self.action_names) or [str(i) for i in range(A)],
            "trans": self.trans.ravel().tolist(),
            "reward": self.reward.ravel().tolist(),
            "terminal": [bool(t) for t in self.terminal],
            "init_dist": self.init_dist.tolist(),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TabularMDP":
        doc = json.loads(text)
        if doc.get("schema") != "tabular-mdp/1":
            raise ValueError("unknown schema")
        S, A = int(doc["n_states"]), int(doc["n_actions"])
        return cls(
            trans=np.asarray(doc["trans"], dtype=float).reshape(S, A, S),
            reward=np.asarray(doc["reward"], dtype=float).reshape(S, A, S),
            terminal=np.asarray(doc["terminal"], dtype=bool),
            init_dist=np.asarray(doc["init_dist"], dtype=float),
            state_names=tuple(doc["states"]),
            action_names=tuple(doc["actions"]),
        )


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    done: bool


@dataclass
class Trajectory:
    """Ordered transitions with optional behavior probabilities.

    ``behavior_probs[t]`` is mu(a_t | s_t) and ``truncated`` marks a horizon
    cut (the last step is not terminal but nothing follows).
    """

    transitions: list
    behavior_probs: np.ndarray | None = None
    truncated: bool = False

    def __len__(self):
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    def __getitem__(self, i):
        return self.transitions[i]

    @property
    def states(self) -> np.ndarray:
        return np.array([t.s for t in self.transitions])

    @property
    def actions(self) -> np.ndarray:
        return np.array([t.a for t in self.transitions])

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.r for t in self.transitions], dtype=float)

    @property
    def next_states(self) -> np.ndarray:
        return np.array([t.s_next for t in self.transitions])

    @property
    def dones(self) -> np.ndarray:
        return np.array([t.done for t in self.transitions], dtype=bool)

    def discounted_return(self, gamma: float) -> float:
        r = self.rewards
        return float(np.sum(r * gamma ** np.arange(len(r))))

    def validate(self) -> None:
        for i, tr in enumerate(self.transitions[:-1]):
            if tr.done:
                raise ValueError(f"transition after done at step {i + 1}")
            if tr.s_next != self.transitions[i + 1].s:
                raise ValueError(f"s_next of step {i} does not match s of step {i + 1}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "s", "a", "r", "s_next", "done"])
        for i, t in enumerate(self.transitions):
            w.writerow([i, t.s, t.a, repr(float(t.r)), t.s_next, int(bool(t.done))])
        return buf.getvalue()


class TabularEnv:
    """Steppable handle over a :class:`TabularMDP`.

    Rewards are the stored expected values R(s, a, s'), so the only noise is
    in start states and transitions.
    """

    def __init__(self, mdp: TabularMDP, rng: np.random.Generator | None = None,
                 start_state: int | None = None):
        self.mdp = mdp
        self.rng = rng if rng is not None else make_stream(0, 0, "env")
        self.start_state = start_state
        self.state = None
        self._cdf = np.cumsum(mdp.trans, axis=2)
        self._init_cdf = np.cumsum(mdp.init_dist)

    @property
    def n_states(self):
        return self.mdp.n_states

    @property
    def n_actions(self):
        return self.mdp.n_actions

    def reset(self) -> int:
        if self.start_state is not None:
            self.state = int(self.start_state)
        else:
            self.state = _sample_cdf(self._init_cdf, self.rng.random())
        return self.state

    def step(self, a: int) -> tuple[int, float, bool]:
        if not 0 <= a < self.mdp.n_actions:
            raise ValueError(f"action {a} out of range")
        s = self.state
        s2 = _sample_cdf(self._cdf[s, a], self.rng.random())
        r = float(self.mdp.reward[s, a, s2])
        self.state = s2
        return s2, r, bool(self.mdp.terminal[s2])


def _sample_cdf(cdf: np.ndarray, u: float) -> int:
    i = int(np.searchsorted(cdf, u, side="right"))
    return min(i, len(cdf) - 1)


class MaxBiasEnv:
    """Two-state episodic task with a noisy dead end.

    From start state A (id 0), ``right`` (action 0) terminates with reward 0
    and ``left`` (action 1) moves to B (id 1) with reward 0. Every one of the
    ``n_b_actions`` actions in B terminates with reward drawn from
    N(mean, std^2). The terminal state has id 2.
    """

    A, B, TERMINAL = 0, 1, 2
    RIGHT, LEFT = 0, 1

    def __init__(self, n_b_actions: int = 10, mean: float = -0.1, std: float = 1.0,
                 rng: np.random.Generator | None = None):
        if n_b_actions < 1:
            raise ValueError("n_b_actions must be >= 1")
        if std < 0:
            raise ValueError("std must be >= 0")
        self.n_b_actions = int(n_b_actions)
        self.mean = float(mean)
        self.std = float(std)
        self.rng = rng if rng is not None else make_stream(0, 0, "env")
        self.state = None

    n_states = 3

    def n_actions_at(self, s: int) -> int:
        return 2 if s == self.A else self.n_b_actions

    def reset(self) -> int:
        self.state = self.A
        return self.state

    def step(self, a: int) -> tuple[int, float, bool]:
        s = self.state
        if s == self.A:
            if a == self.RIGHT:
                self.state = self.TERMINAL
                return self.state, 0.0, True
            if a == self.LEFT:
                self.state = self.B
                return self.state, 0.0, False
            raise ValueError(f"action {a} out of range in A")
        if s == self.B:
            if not 0 <= a < self.n_b_actions:
                raise ValueError(f"action {a} out of range in B")
            self.state = self.TERMINAL
            r = self.mean + self.std * float(self.rng.standard_normal()) if self.std > 0 else self.mean
            return self.state, r, True
        raise RuntimeError("step called on finished episode")


def make_maxbias(n_b_actions: int = 10, mean: float = -0.1, std: float = 1.0,
                 rng: np.random.Generator | None = None) -> MaxBiasEnv:
    """Build the maximization-bias task (see :class:`MaxBiasEnv`)."""
    return MaxBiasEnv(n_b_actions, mean, std, rng)


def make_gridworld_1d(top_terminal: bool = False) -> TabularMDP:
    """Vertical five-cell chain with a rewarding goal at the bottom.

    State ids are ``0: S_T1, 1: s1, 2: s2, 3: s3, 4: S_T2`` (top to bottom),
    and actions are ``0: up, 1: down``. Entering S_T2 pays 1, every other
    transition pays 0.

    By default the top absorbing cell S_T1 is walled off, so ``up`` from s1
    leaves the agent in s1. With that wall the goal is reachable from every
    interior state and at gamma=1 every interior Q* equals 1. Pass
    ``top_terminal=True`` to let ``up`` from s1 enter S_T1 instead.
    """
    S, A = 5, 2
    T = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    for s in (0, 4):
        T[s, :, s] = 1.0
    for s in (1, 2, 3):
        up = s - 1
        if s == 1 and not top_terminal:
            up = 1
        T[s, GRID_UP, up] = 1.0
        T[s, GRID_DOWN, s + 1] = 1.0
    R[3, GRID_DOWN, 4] = 1.0
    init = np.zeros(S)
    init[1] = 1.0
    return TabularMDP(T, R, np.array([True, False, False, False, True]), init,
                      state_names=("S_T1", "s1", "s2", "s3", "S_T2"),
                      action_names=("up", "down"))


def make_baird():
    """Seven-state off-policy counterexample with linear features.

    Returns
    -------
    mdp : TabularMDP
        States 0-5 are the upper states, state 6 the bottom one. Action 0
        (dashed) jumps uniformly to an upper state and action 1 (solid) jumps
        to the bottom state. All rewards are 0 and nothing terminates.
    features : ndarray, shape (7, 8)
        Upper state i has value 2 w_i + w_7. The bottom state has value
        w_6 + 2 w_7 (zero-based weight indices).
    behavior : ndarray, shape (7, 2)
        Dashed with probability 6/7, solid with probability 1/7.
    target : ndarray, shape (7, 2)
        Always solid.
    """
    S, A = 7, 2
    T = np.zeros((S, A, S))
    T[:, 0, :6] = 1.0 / 6.0
    T[:, 1, 6] = 1.0
    R = np.zeros((S, A, S))
    mdp = TabularMDP(T, R, np.zeros(S, dtype=bool), np.full(S, 1.0 / S),
                     action_names=("dashed", "solid"))
    X = np.zeros((S, 8))
    for i in range(6):
        X[i, i] = 2.0
        X[i, 7] = 1.0
    X[6, 6] = 1.0
    X[6, 7] = 2.0
    behavior = np.tile([6.0 / 7.0, 1.0 / 7.0], (S, 1))
    target = np.tile([0.0, 1.0], (S, 1))
    return mdp, X, behavior, target


def make_random_mdp(n_s: int, n_a: int, seed: int, n_terminal: int = 0,
                    concentration: float = 1.0) -> TabularMDP:
    """Random MDP with Dirichlet transition rows and rewards in [0, 1].

    The last ``n_terminal`` states are made absorbing when requested.
    """
    if n_s < 1 or n_a < 1:
        raise ValueError("n_s and n_a must be >= 1")
    if not 0 <= n_terminal < n_s:
        raise ValueError("n_terminal must leave at least one live state")
    rng = make_stream(seed, 0, "random_mdp")
    T = rng.gamma(concentration, size=(n_s, n_a, n_s))
    T = T / T.sum(axis=2, keepdims=True)
    R = rng.random((n_s, n_a, n_s))
    terminal = np.zeros(n_s, dtype=bool)
    if n_terminal:
        terminal[n_s - n_terminal:] = True
        for s in range(n_s - n_terminal, n_s):
            T[s] = 0.0
            T[s, :, s] = 1.0
            R[s] = 0.0
    # renormalize after float division so rows sum to 1 to machine precision
    T = T / T.sum(axis=2, keepdims=True)
    init = np.zeros(n_s)
    init[: n_s - n_terminal] = 1.0 / (n_s - n_terminal)
    return TabularMDP(T, R, terminal, init)


def make_two_goal_grid(width: int = 5, height: int = 5, slip: float = 0.0):
    """Open grid with goals in two opposite corners, for successor features.

    Actions are ``0: up, 1: down, 2: left, 3: right``; bumping a wall keeps
    the agent in place. Nothing terminates. Rewards are state-based, so the
    model holds zeros and tasks are expressed through the cumulant features.

    Returns
    -------
    mdp : TabularMDP
    phi : ndarray, shape (S, 2)
        One indicator feature per goal corner (top-left, bottom-right).
    """
    S = width * height
    T = np.zeros((S, 4, S))
    moves = [(-1, 0), (1, 0), (0, -1), (0, 1)]

    def idx(r, c):
        return r * width + c

    for r in range(height):
        for c in range(width):
            s = idx(r, c)
            for a, (dr, dc) in enumerate(moves):
                r2 = min(max(r + dr, 0), height - 1)
                c2 = min(max(c + dc, 0), width - 1)
                T[s, a, idx(r2, c2)] += 1.0 - slip
                if slip:
                    T[s, a, s] += slip
    phi = np.zeros((S, 2))
    phi[idx(0, 0), 0] = 1.0
    phi[idx(height - 1, width - 1), 1] = 1.0
    mdp = TabularMDP(T, np.zeros_like(T), np.zeros(S, dtype=bool), np.full(S, 1.0 / S),
                     action_names=("up", "down", "left", "right"))
    return mdp, phi


def shape_rewards(mdp: TabularMDP, potential, gamma: float,
                  allow_terminal_potential: bool = False) -> TabularMDP:
    """Potential-based shaping R'(s,a,s') = R(s,a,s') + gamma Phi(s') - Phi(s).

    A nonzero potential on an absorbing state breaks policy invariance, since
    the episode ends there, so it is rejected unless explicitly allowed.
    Absorbing self-loops always keep reward 0.
    """
    phi = np.asarray(potential, dtype=float)
    if phi.shape != (mdp.n_states,):
        raise ValueError(f"potential must have shape ({mdp.n_states},)")
    if not np.all(np.isfinite(phi)):
        raise ValueError("potential must be finite")
    if not allow_terminal_potential and np.any(phi[mdp.terminal] != 0.0):
        raise ValueError("potential must be 0 on terminal states")
    R = mdp.reward + gamma * phi[None, None, :] - phi[:, None, None]
    # keep exact zeros where the model has no mass so phi=0 is an identity map
    R = np.where(mdp.trans > 0, R, mdp.reward)
    R[mdp.terminal] = 0.0
    return TabularMDP(mdp.trans, R, mdp.terminal, mdp.init_dist,
                      mdp.state_names, mdp.action_names)


PolicyLike = np.ndarray | Callable[[int], Sequence[float]]


def rollout(env, policy: PolicyLike, horizon: int, rng: np.random.Generator,
            record_probs: bool = False) -> Trajectory:
    """Run one episode of at most ``horizon`` steps.

    Parameters
    ----------
    env : object with ``reset()`` and ``step(a)``
    policy : ndarray of shape (S, A) or callable
        Either a table of action probabilities or a function mapping a state
        to a probability vector.
    horizon : int
        Maximum number of transitions. A horizon cut is recorded as
        ``truncated=True`` with ``done=False`` on the last step.
    rng : Generator
        Stream used for action sampling only.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    s = env.reset()
    out, probs = [], []
    done = False
    for _ in range(horizon):
        p = np.asarray(policy[s] if isinstance(policy, np.ndarray) else policy(s), dtype=float)
        a = _sample_cdf(np.cumsum(p), rng.random())
        if p[a] <= 0:
            raise ValueError(f"policy emitted action {a} with zero probability")
        s2, r, done = env.step(a)
        out.append(Transition(int(s), int(a), float(r), int(s2), bool(done)))
        probs.append(p[a])
        s = s2
        if done:
            break
    return Trajectory(out, np.array(probs) if record_probs else None, truncated=not done)
