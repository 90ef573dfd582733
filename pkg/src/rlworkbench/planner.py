"""Decision-time planning with a known or learned model.

A model is a callable ``model(s, a, rng) -> (s_next, r, done)``. A
:class:`PlanProblem` bundles it with the horizon, discount, terminal value
estimate and action space. Every planner returns a :class:`PlanResult`
whose ``action`` is the head of the chosen sequence, so any of them can
drive :func:`mpc_controller`.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PlanProblem",
    "PlanResult",
    "SearchNode",
    "ParticleSet",
    "tabular_model",
    "evaluate_sequence",
    "enumerate_sequences",
    "random_shooting",
    "cem_plan",
    "mppi_plan",
    "smc_mpc",
    "multinomial_resample",
    "mcts_search",
    "mpc_controller",
    "traces_to_json",
]


@dataclass
class PlanProblem:
    """Planning task.

    Parameters
    ----------
    model : callable
        ``model(s, a, rng) -> (s_next, r, done)``.
    horizon : int
        Planning horizon H >= 1.
    gamma : float
    value : callable, optional
        Terminal value estimate V(s). Defaults to 0.
    n_actions : int, optional
        Size of a discrete action set.
    bounds : tuple of arrays, optional
        ``(lo, hi)`` of a box action space.
    """

    model: callable
    horizon: int
    gamma: float = 1.0
    value: callable = None
    n_actions: int | None = None
    bounds: tuple | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if (self.n_actions is None) == (self.bounds is None):
            raise ValueError("give exactly one of n_actions and bounds")
        if self.bounds is not None:
            lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in self.bounds)
            if lo.shape != hi.shape or np.any(lo > hi):
                raise ValueError("invalid box bounds")
            self.bounds = (lo, hi)

    @property
    def discrete(self) -> bool:
        return self.n_actions is not None

    @property
    def action_dim(self) -> int:
        return 1 if self.discrete else self.bounds[0].size

    def v_hat(self, s) -> float:
        return 0.0 if self.value is None else float(self.value(s))

    def sample_sequence(self, rng) -> np.ndarray:
        if self.discrete:
            return rng.integers(self.n_actions, size=self.horizon)
        lo, hi = self.bounds
        return rng.uniform(lo, hi, size=(self.horizon, lo.size))


@dataclass
class PlanResult:
    action: object
    sequence: np.ndarray
    scores: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def tabular_model(mdp):
    """Model callable that samples a :class:`~rlworkbench.envs.TabularMDP`."""
    cdf = np.cumsum(mdp.trans, axis=2)

    def model(s, a, rng=None):
        row = cdf[s, a]
        if rng is None:
            s2 = int(np.argmax(mdp.trans[s, a]))
        else:
            s2 = min(int(np.searchsorted(row, rng.random(), side="right")), mdp.n_states - 1)
        return s2, float(mdp.reward[s, a, s2]), bool(mdp.terminal[s2])

    return model


def evaluate_sequence(problem: PlanProblem, s0, seq, rng=None) -> float:
    """sum_h gamma^h r_h + gamma^H V(s_H), stopping without bootstrap at a terminal."""
    s, ret, disc = s0, 0.0, 1.0
    for a in seq:
        a = int(a) if problem.discrete else np.asarray(a, dtype=float)
        s, r, done = problem.model(s, a, rng)
        ret += disc * r
        disc *= problem.gamma
        if done:
            return ret
    return ret + disc * problem.v_hat(s)


def enumerate_sequences(problem: PlanProblem) -> np.ndarray:
    """All n_actions**H discrete sequences in lexicographic order."""
    if not problem.discrete:
        raise ValueError("enumeration needs a discrete action set")
    return np.array(list(itertools.product(range(problem.n_actions), repeat=problem.horizon)))


def _head(problem, seq):
    return int(seq[0]) if problem.discrete else np.array(seq[0], dtype=float)


def random_shooting(problem: PlanProblem, s0, n_samples: int = 64, rng=None, proposal=None,
                    candidates=None) -> PlanResult:
    """Best of ``n_samples`` sampled sequences. Ties go to the earliest sample.

    ``proposal(rng) -> sequence`` overrides uniform sampling. ``candidates``
    supplies the sequences directly (for example from
    :func:`enumerate_sequences`).
    """
    if candidates is None:
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        draw = proposal or problem.sample_sequence
        candidates = [draw(rng) for _ in range(n_samples)]
    candidates = np.asarray(candidates)
    scores = np.array([evaluate_sequence(problem, s0, c, rng) for c in candidates])
    best = int(np.argmax(scores))
    return PlanResult(_head(problem, candidates[best]), candidates[best], scores)


def cem_plan(problem: PlanProblem, s0, rng, iterations: int = 10, population: int = 64,
             elite_frac: float = 0.125, init_mean=None, init_std=None,
             std_floor: float = 1e-3) -> PlanResult:
    """Cross-entropy method over box-constrained action sequences.

    Samples are clipped to the box. The standard deviation is clamped at
    ``std_floor``; ``info["floor_hits"]`` counts clamped coordinates.
    """
    if problem.discrete:
        raise ValueError("CEM needs a box action space")
    n_elite = int(round(population * elite_frac))
    if n_elite < 2:
        raise ValueError("population * elite_frac must be >= 2")
    lo, hi = problem.bounds
    shape = (problem.horizon, lo.size)
    mean = np.zeros(shape) if init_mean is None else np.broadcast_to(init_mean, shape).astype(float)
    std = (np.broadcast_to((hi - lo) / 2.0, shape).astype(float) if init_std is None
           else np.broadcast_to(init_std, shape).astype(float))
    floor_hits = 0
    history = []
    for _ in range(iterations):
        samples = np.clip(mean + std * rng.standard_normal((population,) + shape), lo, hi)
        scores = np.array([evaluate_sequence(problem, s0, x, rng) for x in samples])
        elite = samples[np.argsort(-scores, kind="stable")[:n_elite]]
        mean = elite.mean(axis=0)
        std = elite.std(axis=0)
        floor_hits += int(np.sum(std < std_floor))
        std = np.maximum(std, std_floor)
        history.append(float(scores.max()))
    return PlanResult(mean[0].copy(), mean, None,
                      {"std": std, "floor_hits": floor_hits, "best_scores": history})


def mppi_plan(problem: PlanProblem, s0, rng, population: int = 64, temperature: float = 1.0,
              noise_std: float = 0.5, prev=None) -> PlanResult:
    """Model predictive path integral step.

    The reference is ``prev`` shifted forward by one step with a zero
    action appended (zeros on the first call). Perturbed sequences are
    weighted by softmax(return / temperature); ``temperature=0`` keeps only
    the best sample. ``info["samples"]`` holds the perturbed sequences.
    """
    if problem.discrete:
        raise ValueError("MPPI needs a box action space")
    lo, hi = problem.bounds
    shape = (problem.horizon, lo.size)
    if prev is None:
        ref = np.zeros(shape)
    else:
        prev = np.asarray(prev, dtype=float).reshape(shape)
        ref = np.vstack([prev[1:], np.zeros((1, lo.size))])
    samples = np.clip(ref + noise_std * rng.standard_normal((population,) + shape), lo, hi)
    scores = np.array([evaluate_sequence(problem, s0, x, rng) for x in samples])
    if not np.any(np.isfinite(scores)):
        raise FloatingPointError("every sampled return is non-finite")
    if temperature == 0:
        w = np.zeros(population)
        w[int(np.argmax(scores))] = 1.0
    else:
        z = scores / temperature
        z = np.where(np.isfinite(z), z, -np.inf)
        w = np.exp(z - z.max())
        w /= w.sum()
    seq = np.tensordot(w, samples, axes=1)
    return PlanResult(seq[0].copy(), seq, scores, {"weights": w, "samples": samples})


@dataclass
class ParticleSet:
    """Particles for SMC planning: current states, head actions, weights."""

    states: list
    heads: list
    weights: np.ndarray
    done: np.ndarray

    @property
    def ess(self) -> float:
        w = self.weights / self.weights.sum()
        return float(1.0 / np.sum(w * w))


def multinomial_resample(weights, rng) -> np.ndarray:
    """Indices drawn i.i.d. from the normalized weights."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    return rng.choice(w.size, size=w.size, p=w)


def smc_mpc(problem: PlanProblem, s0, policy, value, n_particles: int, rng) -> PlanResult:
    """Sequential Monte Carlo planning with a policy proposal and value twist.

    ``policy(s, rng) -> (a, log_prob)`` proposes actions and ``value(s)``
    is the twist. Each step reweights by exp(A) with the single-sample
    advantage A = r - log pi(a|s) + V(s') - V(s), then resamples
    multinomially and resets the weights. Finished particles keep weight
    factor 1. Returns the head action of a uniformly drawn survivor.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    ps = ParticleSet([s0] * n_particles, [None] * n_particles, np.ones(n_particles),
                     np.zeros(n_particles, dtype=bool))
    resets = 0
    ess = []
    for _ in range(problem.horizon):
        logw = np.zeros(n_particles)
        for n in range(n_particles):
            if ps.done[n]:
                continue
            s = ps.states[n]
            a, logp = policy(s, rng)
            s2, r, done = problem.model(s, a, rng)
            v2 = 0.0 if done else float(value(s2))
            logw[n] = r - logp + v2 - float(value(s))
            ps.states[n], ps.done[n] = s2, done
            if ps.heads[n] is None:
                ps.heads[n] = a
        w = ps.weights * np.exp(logw - logw.max())
        if not np.all(np.isfinite(w)) or w.sum() <= 0:
            w = np.ones(n_particles)
            resets += 1
        ps.weights = w
        ess.append(ps.ess)
        idx = multinomial_resample(w, rng) if n_particles > 1 else np.zeros(1, dtype=int)
        ps = ParticleSet([ps.states[i] for i in idx], [ps.heads[i] for i in idx],
                         np.ones(n_particles), ps.done[idx].copy())
        if np.all(ps.done):
            break
    pick = int(rng.integers(n_particles))
    head = ps.heads[pick]
    return PlanResult(head, np.array([head]), None,
                      {"heads": list(ps.heads), "degenerate_resets": resets, "ess": ess})


@dataclass
class SearchNode:
    """MCTS node with per-action statistics N, W, Q and prior P."""

    state: object
    prior: np.ndarray
    N: np.ndarray = None
    W: np.ndarray = None
    children: dict = field(default_factory=dict)
    edges: dict = field(default_factory=dict)  # a -> (reward, done)

    def __post_init__(self):
        k = self.prior.size
        self.N = np.zeros(k) if self.N is None else self.N
        self.W = np.zeros(k) if self.W is None else self.W

    @property
    def Q(self) -> np.ndarray:
        return np.divide(self.W, self.N, out=np.zeros_like(self.W), where=self.N > 0)


def _select(node: SearchNode, c_uct: float) -> int:
    unvisited = (node.N == 0) & (node.prior > 0)
    if np.any(unvisited):
        p = np.where(unvisited, node.prior, -1.0)
        return int(np.argmax(p))
    total = node.N.sum()
    bonus = node.prior * math.sqrt(total) / (1.0 + node.N)
    if math.isinf(c_uct):
        score = bonus
    else:
        score = node.Q + c_uct * bonus
    score = np.where(node.prior > 0, score, -np.inf)
    return int(np.argmax(score))


def mcts_search(problem: PlanProblem, s0, prior, value=None, n_sim: int = 50,
                c_uct: float = 1.0, tau: float = 1.0, rng=None) -> PlanResult:
    """Monte Carlo tree search over a deterministic model.

    Each simulation descends by prior-weighted UCB
    Q + c P sqrt(sum N) / (1 + N), where actions with positive prior and no
    visits are tried first (highest prior first) and zero-prior actions are
    never chosen. The first new edge is expanded, its leaf is valued by
    ``value`` (or ``problem.value``) and the discounted return is backed up.
    The result's ``scores`` are N(s0, .)^(1/tau) normalized; ``tau=0`` gives
    a one-hot on the most visited action.
    """
    if n_sim < 1:
        raise ValueError("n_sim must be >= 1")
    if not problem.discrete:
        raise ValueError("MCTS needs a discrete action set")
    vfn = value if value is not None else problem.v_hat

    def make(s):
        p = np.asarray(prior(s), dtype=float)
        if p.shape != (problem.n_actions,) or np.any(p < 0) or p.sum() <= 0:
            raise ValueError("prior must be a nonnegative vector over actions")
        return SearchNode(s, p / p.sum())

    root = make(s0)
    for _ in range(n_sim):
        node, path, depth = root, [], 0
        while True:
            a = _select(node, c_uct)
            path.append((node, a))
            depth += 1
            if a not in node.edges:
                s2, r, done = problem.model(node.state, a, rng)
                node.edges[a] = (r, done)
                if not done:
                    node.children[a] = make(s2)
                leaf = 0.0 if done else problem.gamma * float(vfn(s2))
                G = r + leaf
                break
            r, done = node.edges[a]
            if done:
                G = r
                break
            if depth >= problem.horizon:
                G = r + problem.gamma * float(vfn(node.children[a].state))
                break
            node = node.children[a]
        # back up: G currently holds the return from the last edge on the path
        for k in range(len(path) - 1, -1, -1):
            nd, a = path[k]
            if k < len(path) - 1:
                G = nd.edges[a][0] + problem.gamma * G
            nd.N[a] += 1
            nd.W[a] += G
    visits = root.N.copy()
    if tau == 0:
        pol = np.zeros_like(visits)
        pol[int(np.argmax(visits))] = 1.0
    else:
        pw = visits ** (1.0 / tau)
        pol = pw / pw.sum()
    best = int(np.argmax(visits))
    return PlanResult(best, np.array([best]), pol, {"visits": visits, "Q": root.Q, "root": root})


def mpc_controller(env, planner, max_steps: int, replan_every: int = 1) -> dict:
    """Closed-loop receding-horizon control.

    ``planner(s) -> PlanResult``. The first ``replan_every`` actions of each
    plan are executed before replanning. Returns the trajectory and one
    trace record per replan.
    """
    if replan_every < 1:
        raise ValueError("replan_every must be >= 1")
    s = env.reset()
    states, actions, rewards, records = [s], [], [], []
    t = 0
    done = False
    while t < max_steps and not done:
        plan = planner(s)
        rec = {"step": t, "state": _jsonable(s), "action": _jsonable(plan.action)}
        if plan.scores is not None:
            key = "visit_share" if "visits" in plan.info else "scores"
            rec[key] = _jsonable(plan.scores)
        records.append(rec)
        seq = plan.sequence if len(plan.sequence) else [plan.action]
        for k in range(min(replan_every, len(seq))):
            a = plan.action if k == 0 else (int(seq[k]) if np.ndim(seq[k]) == 0 else seq[k])
            s, r, done = env.step(a)
            states.append(s)
            actions.append(_jsonable(a))
            rewards.append(float(r))
            t += 1
            if done or t >= max_steps:
                break
    return {"states": states, "actions": actions, "rewards": rewards, "records": records,
            "done": done}


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


def traces_to_json(records: list) -> str:
    """Deterministic JSON text for a list of replan records."""
    return json.dumps([{k: _jsonable(v) for k, v in r.items()} for r in records],
                      sort_keys=True, indent=1, allow_nan=True) + "\n"
