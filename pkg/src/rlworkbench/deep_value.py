"""Value-based control with function approximation.

Replay storage, DQN-family bootstrap targets, the regression update, the
dueling combination, and the off-policy linear TD divergence demo.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bandits import epsilon_greedy
from .envs import TabularEnv, TabularMDP
from .fa import Approximator, TargetCopy, clip_grad_norm, ema_update, grad, sgd_step
from .rng import make_stream

__all__ = [
    "ReplayBuffer",
    "QNetworkBundle",
    "dqn_target",
    "dqn_update",
    "dueling_combine",
    "nstep_transitions",
    "baird_td0_run",
    "BairdTrace",
    "train_dqn",
    "PER_EPS",
    "PER_EXPONENT",
]

PER_EPS = 1e-3
PER_EXPONENT = 0.6


class ReplayBuffer:
    """Bounded FIFO store of transitions.

    Observations are stored as float vectors. New items receive the current
    maximum priority (1.0 for an empty buffer) so they are sampled soon.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.size = 0
        self._next = 0
        self._s = self._s2 = None
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._done = np.zeros(capacity, dtype=bool)
        self._disc = np.ones(capacity)
        self._prio = np.zeros(capacity)

    def __len__(self):
        return self.size

    def push(self, s, a, r: float, s_next, done: bool, discount: float | None = None,
             priority: float | None = None) -> int:
        """Store one transition and return its slot.

        ``discount`` overrides the bootstrap factor (used for n-step items).
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        s_next = np.atleast_1d(np.asarray(s_next, dtype=float))
        if self._s is None:
            self._s = np.zeros((self.capacity,) + s.shape)
            self._s2 = np.zeros((self.capacity,) + s.shape)
        i = self._next
        self._s[i], self._s2[i] = s, s_next
        self._a[i], self._r[i], self._done[i] = a, r, done
        self._disc[i] = np.nan if discount is None else discount
        if priority is None:
            priority = self._prio[: self.size].max() if self.size else 1.0
        self._prio[i] = priority
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def items(self) -> dict:
        """All stored transitions, oldest first."""
        if self.size < self.capacity:
            order = np.arange(self.size)
        else:
            order = (np.arange(self.capacity) + self._next) % self.capacity
        return self._gather(order)

    def _gather(self, idx) -> dict:
        return {"s": self._s[idx], "a": self._a[idx], "r": self._r[idx], "s_next": self._s2[idx],
                "done": self._done[idx], "discount": self._disc[idx], "index": np.asarray(idx)}

    def sampling_probs(self, eps_p: float = PER_EPS, eta_p: float = PER_EXPONENT) -> np.ndarray:
        w = (np.abs(self._prio[: self.size]) + eps_p) ** eta_p
        tot = w.sum()
        if not tot > 0:
            raise ValueError("all priorities are zero")
        return w / tot

    def sample(self, batch_size: int, rng, mode: str = "uniform", eps_p: float = PER_EPS,
               eta_p: float = PER_EXPONENT) -> dict:
        """Draw ``batch_size`` items with replacement.

        ``mode="prioritized"`` draws item i with probability proportional
        to (|delta_i| + eps_p) ** eta_p. No importance weights are applied.
        """
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if mode == "uniform":
            idx = rng.integers(0, self.size, size=batch_size)
        elif mode == "prioritized":
            idx = rng.choice(self.size, size=batch_size, p=self.sampling_probs(eps_p, eta_p))
        else:
            raise ValueError(f"unknown sampling mode {mode!r}")
        return self._gather(idx)

    def update_priorities(self, idx, td_errors) -> None:
        self._prio[np.asarray(idx)] = np.abs(np.asarray(td_errors, dtype=float))


@dataclass
class QNetworkBundle:
    """Online Q networks with their target shadows.

    ``subset`` is the REDQ subset size M (1 <= M <= N).
    """

    online: list
    targets: list
    gamma: float = 0.99
    subset: int = 2
    rho: float = 0.995
    target_mode: str = "ema"  # or "copy"
    copy_period: int = 100
    updates: int = field(default=0)

    @classmethod
    def build(cls, make_net, n: int = 1, gamma: float = 0.99, subset: int | None = None,
              rho: float = 0.995, target_mode: str = "ema", copy_period: int = 100):
        nets = [make_net(i) for i in range(n)]
        return cls(nets, [TargetCopy.of(q, rho) for q in nets], gamma,
                   subset if subset is not None else min(2, n), rho, target_mode, copy_period)

    @property
    def n(self) -> int:
        return len(self.online)

    def q_online(self, i: int, x) -> np.ndarray:
        return self.online[i].forward(x)

    def q_target(self, i: int, x) -> np.ndarray:
        return self.online[i].forward(x, params=self.targets[i].params)

    def refresh_targets(self) -> None:
        for i, q in enumerate(self.online):
            if self.target_mode == "ema":
                self.targets[i] = ema_update(self.targets[i], q.params.data, self.rho)
            elif self.updates % self.copy_period == 0:
                self.targets[i] = ema_update(self.targets[i], q.params.data, 0.0)


def dqn_target(r, s_next, done, bundle: QNetworkBundle, variant: str = "vanilla", rng=None,
               discount=None, subset_idx=None) -> np.ndarray:
    """Bootstrap targets for a batch.

    Parameters
    ----------
    variant : {"vanilla", "double", "clipped", "redq"}
        vanilla: r + g max_a Qbar_0(s', a)
        double:  r + g Qbar_0(s', argmax_a Q_0(s', a))
        clipped: r + g min_i Qbar_i(s', argmax_a Q_i(s', a)) over nets 0 and 1
        redq:    r + g max_a min_{i in M} Qbar_i(s', a) for a random subset M
    discount : array, optional
        Per-item bootstrap factor. Defaults to ``bundle.gamma``. n-step items
        carry gamma**k here.
    subset_idx : sequence of int, optional
        Fixed REDQ subset (otherwise drawn with ``rng``).
    """
    r = np.asarray(r, dtype=float)
    done = np.asarray(done, dtype=bool)
    disc = np.full(r.shape, bundle.gamma) if discount is None else np.asarray(discount, float)
    disc = np.where(np.isnan(disc), bundle.gamma, disc)
    s_next = np.asarray(s_next, dtype=float)
    rows = np.arange(r.shape[0])
    if variant == "vanilla":
        boot = bundle.q_target(0, s_next).max(axis=-1)
    elif variant == "double":
        a_star = np.argmax(bundle.q_online(0, s_next), axis=-1)
        boot = bundle.q_target(0, s_next)[rows, a_star]
    elif variant == "clipped":
        if bundle.n < 2:
            raise ValueError("clipped target needs two networks")
        vals = []
        for i in (0, 1):
            a_star = np.argmax(bundle.q_online(i, s_next), axis=-1)
            vals.append(bundle.q_target(i, s_next)[rows, a_star])
        boot = np.minimum(vals[0], vals[1])
    elif variant == "redq":
        M = bundle.subset
        if not 1 <= M <= bundle.n:
            raise ValueError("REDQ subset size must satisfy 1 <= M <= N")
        if subset_idx is None:
            rng = rng if rng is not None else make_stream(0, 0, "redq")
            subset_idx = rng.choice(bundle.n, size=M, replace=False)
        qs = np.stack([bundle.q_target(int(i), s_next) for i in subset_idx])
        boot = qs.min(axis=0).max(axis=-1)
    else:
        raise ValueError(f"unknown target variant {variant!r}")
    return r + np.where(done, 0.0, disc * boot)


def dqn_update(bundle: QNetworkBundle, batch: dict, eta: float, variant: str = "vanilla",
               rng=None, clip_norm: float | None = 10.0, optimizers=None) -> dict:
    """One regression step of every online net toward detached targets.

    The loss of net i is mean_b (Q_i(s_b, a_b) - y_b)^2. Targets are computed
    once, before any net moves, and target shadows are refreshed afterwards.
    """
    if len(batch["r"]) == 0:
        raise ValueError("empty batch")
    y = dqn_target(batch["r"], batch["s_next"], batch["done"], bundle, variant, rng,
                   batch.get("discount"))
    a = np.asarray(batch["a"], dtype=int)
    losses, mean_q, td = [], [], None
    for i, net in enumerate(bundle.online):
        def loss_fn(model):
            q = ad.gather(model(batch["s"]), a)
            return ad.vmean(ad.square(q - ad.stop_gradient(y)))

        g, loss = grad(net, loss_fn)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite DQN loss")
        if clip_norm is not None:
            g = clip_grad_norm(g, clip_norm)
        if optimizers is not None:
            net.params.data, _ = optimizers[i].step(net.params.data, g)
        else:
            net.params.data, _ = sgd_step(net.params.data, g, eta)
        losses.append(loss)
        if i == 0:
            q_now = net.forward(batch["s"])
            mean_q.append(float(q_now.mean()))
            td = y - q_now[np.arange(len(a)), a]
    bundle.updates += 1
    bundle.refresh_targets()
    return {"loss": float(np.mean(losses)), "mean_q": mean_q[0], "td_error": td}


def dueling_combine(V, A):
    """Q(s,a) = V(s) + A(s,a) - mean_a' A(s,a'). Accepts arrays or Vars."""
    if isinstance(V, ad.Var) or isinstance(A, ad.Var):
        V, A = ad.as_var(V), ad.as_var(A)
        if V.ndim == A.ndim - 1:
            V = V.reshape(V.shape + (1,))
        return V + A - ad.vmean(A, axis=-1, keepdims=True)
    V = np.asarray(V, dtype=float)
    A = np.asarray(A, dtype=float)
    if V.ndim == A.ndim - 1:
        V = V[..., None]
    return V + A - A.mean(axis=-1, keepdims=True)


def nstep_transitions(states, actions, rewards, dones, n: int, gamma: float):
    """Fold a trajectory into n-step items.

    Returns a list of ``(s_t, a_t, sum_k gamma^k r_{t+k}, s_{t+m}, done, gamma^m)``
    where m <= n stops at the first terminal step. ``states`` has one more
    entry than ``actions`` (the final successor).
    """
    T = len(actions)
    out = []
    for t in range(T):
        G, disc, done = 0.0, 1.0, False
        m = 0
        for k in range(n):
            if t + k >= T:
                break
            G += disc * rewards[t + k]
            disc *= gamma
            m = k + 1
            if dones[t + k]:
                done = True
                break
        out.append((states[t], actions[t], G, states[t + m], done, disc))
    return out


@dataclass
class BairdTrace:
    w_norm: np.ndarray    # ||w||_inf after each sweep
    td_error: np.ndarray  # visitation-weighted RMS expected TD error per sweep
    w: np.ndarray         # final weights


BAIRD_W0 = np.array([1.0, 1, 1, 1, 1, 1, 10, 1])


def baird_td0_run(features, behavior, target, eta: float = 0.01, sweeps: int = 1000,
                  gamma: float = 0.99, w0=None, mode: str = "sampled", rng=None,
                  mdp: TabularMDP | None = None) -> BairdTrace:
    """Semi-gradient TD(0) with linear features on the seven-state task.

    ``mode="sampled"`` follows one continuing behavior trajectory and applies
    w += eta * rho * delta * x(s) per step with rho = pi(a|s) / b(a|s). One
    sweep is |S| = 7 consecutive steps. ``mode="expected"`` instead applies
    the expected update averaged uniformly over states once per sweep.

    Passing ``behavior = target`` gives the on-policy run.
    """
    from .envs import make_baird

    if mdp is None:
        mdp = make_baird()[0]
    X = np.asarray(features, dtype=float)
    b = np.asarray(behavior, dtype=float)
    pi = np.asarray(target, dtype=float)
    S = X.shape[0]
    w = (BAIRD_W0 if w0 is None else np.asarray(w0, dtype=float)).copy()
    rng = rng if rng is not None else make_stream(0, 0, "baird")
    norms = np.empty(sweeps)
    tds = np.empty(sweeps)
    R = mdp.expected_reward()
    T = mdp.trans
    ratio = np.divide(pi, b, out=np.zeros_like(pi), where=b > 0)

    def expected_td(v):
        # delta_bar(s) = sum_a pi(a|s) [R(s,a) + gamma sum_s' T v(s')] - v(s)
        return np.sum(pi * (R + gamma * T @ v), axis=1) - v

    if mode == "sampled":
        env = TabularEnv(mdp, rng)
        s = env.reset()
        b_cdf = np.cumsum(b, axis=1)
        for k in range(sweeps):
            visits = np.zeros(S)
            for _ in range(S):
                a = min(int(np.searchsorted(b_cdf[s], rng.random(), side="right")), b.shape[1] - 1)
                s2, r, _ = env.step(a)
                delta = r + gamma * X[s2] @ w - X[s] @ w
                w = w + eta * ratio[s, a] * delta * X[s]
                visits[s] += 1
                s = s2
            norms[k] = np.max(np.abs(w))
            d = visits / visits.sum()
            tds[k] = np.sqrt(np.sum(d * expected_td(X @ w) ** 2))
    elif mode == "expected":
        # the expected update under the behavior state distribution (uniform)
        d = np.full(S, 1.0 / S)
        for k in range(sweeps):
            v = X @ w
            w = w + eta * X.T @ (d * expected_td(v))
            norms[k] = np.max(np.abs(w))
            tds[k] = np.sqrt(np.sum(d * expected_td(X @ w) ** 2))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return BairdTrace(norms, tds, w)


def train_dqn(mdp: TabularMDP, steps: int = 20_000, seed: int = 0, gamma: float = 0.9,
              eta: float = 0.05, batch_size: int = 32, capacity: int = 10_000,
              variant: str = "vanilla", n_nets: int = 1, epsilon: tuple = (1.0, 0.05, 5000),
              rho: float = 0.995, learn_start: int = 100, eval_every: int = 1000,
              eval_horizon: int = 50, hidden=None, sampling: str = "uniform", run_id: int = 0):
    """DQN on a tabular MDP with one-hot state features.

    ``hidden=None`` gives a linear (tabular-equivalent) Q head, otherwise an
    MLP with the given hidden sizes. ``epsilon`` is (start, end, decay
    steps) for a linear anneal.

    Returns ``(bundle, rows)`` where rows are dicts with keys step, loss,
    mean_q, epsilon, return_on_eval (NaN between evaluations).
    """
    S, A = mdp.n_states, mdp.n_actions
    rng = make_stream(seed, run_id, "dqn")
    env = TabularEnv(mdp, make_stream(seed, run_id, "env"))
    eye = np.eye(S)

    def make_net(i):
        if hidden is None:
            return Approximator.linear(S, A, head="vector")
        return Approximator.mlp(S, hidden, A, head="vector", seed=seed * 1000 + i)

    bundle = QNetworkBundle.build(make_net, n_nets, gamma, rho=rho)
    buf = ReplayBuffer(capacity)
    rows = []
    s = env.reset()
    eps0, eps1, decay = epsilon
    loss, mean_q = float("nan"), float("nan")
    t_ep = 0
    for t in range(1, steps + 1):
        eps = eps1 + (eps0 - eps1) * max(0.0, 1.0 - t / decay)
        q = bundle.q_online(0, eye[s])
        a = epsilon_greedy(q, eps, rng)
        s2, r, done = env.step(a)
        buf.push(eye[s], a, r, eye[s2], done)
        t_ep += 1
        if done or t_ep >= eval_horizon:
            s = env.reset()
            t_ep = 0
        else:
            s = s2
        if len(buf) >= learn_start:
            batch = buf.sample(batch_size, rng, sampling)
            info = dqn_update(bundle, batch, eta, variant, rng)
            if sampling == "prioritized":
                buf.update_priorities(batch["index"], info["td_error"])
            loss, mean_q = info["loss"], info["mean_q"]
        ret = float("nan")
        if eval_every and t % eval_every == 0:
            ret = greedy_return(mdp, bundle.q_online(0, eye), gamma, eval_horizon)
        rows.append({"step": t, "loss": loss, "mean_q": mean_q, "epsilon": eps,
                     "return_on_eval": ret})
    return bundle, rows


def greedy_return(mdp: TabularMDP, Q, gamma: float, horizon: int) -> float:
    """Expected discounted return of the greedy policy over ``horizon`` steps
    from the start distribution (exact, by propagating the state distribution)."""
    from .dp import greedy_policy

    pi = greedy_policy(Q)
    T_pi, r_pi = mdp.policy_model(pi)
    r_pi = r_pi * ~mdp.terminal
    d = mdp.init_dist.copy()
    total, disc = 0.0, 1.0
    for _ in range(horizon):
        total += disc * float(d @ r_pi)
        d = d @ T_pi
        disc *= gamma
    return total
