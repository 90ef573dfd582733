"""Policy-gradient and actor-critic learners.

Tabular helpers (exact objective, exact gradient, vectorized REINFORCE)
serve as oracles for the generic estimators, which work on any
:class:`~rlworkbench.fa.Approximator`. Advantage and target computations
return plain arrays, so they are detached from gradient flow by
construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .dp import policy_evaluation_exact
from .envs import TabularEnv, TabularMDP, Trajectory, _sample_cdf
from .fa import (AdaptiveOptimizer, Approximator, TargetCopy, clip_grad_norm, ema_update,
                 joint_grad, grad)
from .rng import make_stream

__all__ = [
    "ACConfig",
    "AdvantageBatch",
    "softmax_table",
    "exact_objective",
    "exact_policy_gradient",
    "policy_gradient_theorem",
    "sample_episodes",
    "reinforce_grad_tabular",
    "reinforce_grad",
    "reinforce_update",
    "gae",
    "vtrace_targets",
    "offpolicy_pg_grad",
    "entropy",
    "a2c_loss",
    "ppo_surrogate",
    "ppo_loss",
    "ppo_update",
    "collect_rollout",
    "train_a2c",
    "train_ppo",
    "soft_value",
    "soft_value_iteration",
    "sac_discrete_update",
    "sac_gaussian_update",
    "gaussian_log_prob",
    "train_sac_discrete",
    "td3_target_action",
    "td3_update",
    "lqr_step",
    "lqr_cost",
    "lqr_best_gain",
    "train_td3_lqr",
]


# --------------------------------------------------------------------- config
@dataclass(frozen=True)
class ACConfig:
    """Loss weights and hyperparameters shared by the actor-critic learners.

    ``target_entropy=None`` means 0.5 log|A| for discrete SAC.
    """

    lambda_td: float = 0.5
    lambda_pg: float = 1.0
    lambda_ent: float = 0.01
    gamma: float = 0.9
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    rollout: int = 128
    normalize_adv: bool = True
    alpha: float = 0.1
    learn_alpha: bool = False
    alpha_lr: float = 1e-2
    target_entropy: float | None = None
    c_bar: float = 1.0
    rho_bar: float = 1.0
    td3_noise: float = 0.2
    td3_clip: float = 0.5
    policy_delay: int = 2
    rho: float = 0.995

    def __post_init__(self):
        for name in ("lambda_td", "lambda_pg", "lambda_ent", "alpha", "c_bar", "rho_bar",
                     "td3_noise", "td3_clip"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.epochs < 1 or self.rollout < 1 or self.policy_delay < 1:
            raise ValueError("epochs, rollout and policy_delay must be >= 1")


@dataclass
class AdvantageBatch:
    """Per-step advantages A_t and critic targets q_t = A_t + v_t.

    Arrays are read-only copies: they are constants for every loss built
    from them.
    """

    advantages: np.ndarray
    targets: np.ndarray
    logp_behavior: np.ndarray | None = None
    dones: np.ndarray | None = None

    def __post_init__(self):
        for name in ("advantages", "targets", "logp_behavior", "dones"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v)
                v.setflags(write=False)
                object.__setattr__(self, name, v)


# ------------------------------------------------------------ tabular oracles
def softmax_table(logits) -> np.ndarray:
    """Row-wise softmax of an (S, A) logit table."""
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def exact_objective(mdp: TabularMDP, logits, gamma: float) -> float:
    """J(theta) = sum_s p0(s) V^pi(s) for a tabular softmax policy."""
    V = policy_evaluation_exact(mdp, softmax_table(logits), gamma)
    return float(mdp.init_dist @ V)


def exact_policy_gradient(mdp: TabularMDP, logits, gamma: float, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of :func:`exact_objective` over the logits."""
    logits = np.asarray(logits, dtype=float)
    flat = ad.numerical_grad(lambda p: exact_objective(mdp, p.reshape(logits.shape), gamma),
                             logits.ravel(), h)
    return flat.reshape(logits.shape)


def policy_gradient_theorem(mdp: TabularMDP, logits, gamma: float) -> np.ndarray:
    """Analytic gradient sum_s d(s) sum_a pi(a|s) A(s,a) grad log pi(a|s).

    ``d`` is the discounted occupancy p0^T (I - gamma T_pi)^-1. For tabular
    softmax this reduces to ``d[s] * pi[s,a] * A[s,a]``.
    """
    pi = softmax_table(logits)
    V = policy_evaluation_exact(mdp, pi, gamma)
    Q = (mdp.trans * (mdp.reward + gamma * V[None, None, :])).sum(axis=2)
    Q[mdp.terminal] = 0.0
    T_pi, _ = mdp.policy_model(pi)
    T_pi[mdp.terminal] = 0.0
    d = np.linalg.solve((np.eye(mdp.n_states) - gamma * T_pi).T, mdp.init_dist)
    return d[:, None] * pi * (Q - V[:, None])


def sample_episodes(mdp: TabularMDP, probs, n: int, horizon: int, rng) -> dict:
    """Vectorized episode sampling under a tabular policy.

    Returns arrays of shape (n, horizon): ``s``, ``a``, ``r`` and ``alive``
    (True for steps that happened).
    """
    probs = np.asarray(probs, dtype=float)
    pcdf = np.cumsum(probs, axis=1)
    tcdf = np.cumsum(mdp.trans, axis=2)
    s = np.minimum(np.searchsorted(np.cumsum(mdp.init_dist), rng.random(n), side="right"),
                   mdp.n_states - 1)
    alive = ~mdp.terminal[s]
    S = np.zeros((n, horizon), dtype=int)
    A = np.zeros((n, horizon), dtype=int)
    R = np.zeros((n, horizon))
    L = np.zeros((n, horizon), dtype=bool)
    for t in range(horizon):
        a = (rng.random(n)[:, None] >= pcdf[s]).sum(axis=1)
        a = np.minimum(a, mdp.n_actions - 1)
        s2 = (rng.random(n)[:, None] >= tcdf[s, a]).sum(axis=1)
        s2 = np.minimum(s2, mdp.n_states - 1)
        S[:, t], A[:, t], L[:, t] = s, a, alive
        R[:, t] = np.where(alive, mdp.reward[s, a, s2], 0.0)
        alive = alive & ~mdp.terminal[s2]
        s = s2
    return {"s": S, "a": A, "r": R, "alive": L}


def _reward_to_go(r: np.ndarray, gamma: float) -> np.ndarray:
    G = np.zeros_like(r)
    acc = np.zeros(r.shape[:-1])
    for t in range(r.shape[-1] - 1, -1, -1):
        acc = r[..., t] + gamma * acc
        G[..., t] = acc
    return G


def reinforce_grad_tabular(logits, episodes: dict, gamma: float, baseline=None,
                           discount_weight: bool = False) -> np.ndarray:
    """Per-episode REINFORCE estimates for a tabular softmax policy.

    Each estimate is sum_t w_t (G_t - b(s_t)) grad log pi(a_t|s_t) with
    ``w_t = gamma^t`` when ``discount_weight`` is set and 1 otherwise.
    ``baseline`` is a scalar or an array over states.

    Returns
    -------
    ndarray, shape (n_episodes, S, A)
    """
    pi = softmax_table(logits)
    S, A = pi.shape
    s, a, r, alive = episodes["s"], episodes["a"], episodes["r"], episodes["alive"]
    n, H = s.shape
    G = _reward_to_go(r, gamma)
    b = 0.0 if baseline is None else np.broadcast_to(np.asarray(baseline, dtype=float), (S,))[s]
    w = gamma ** np.arange(H) if discount_weight else np.ones(H)
    coef = np.where(alive, (G - b) * w[None, :], 0.0)
    out = np.zeros((n, S, A))
    rows = np.arange(n)
    for t in range(H):
        score = -pi[s[:, t]]
        score[rows, a[:, t]] += 1.0
        out[rows, s[:, t]] += coef[:, t, None] * score
    return out


def _as_features(x, n_states: int | None):
    x = np.asarray(x)
    if x.ndim == 1 and n_states is not None:
        return np.eye(n_states)[x.astype(int)]
    return np.asarray(x, dtype=float)


def reinforce_grad(policy: Approximator, trajectory: Trajectory, gamma: float, baseline=None,
                   discount_weight: bool = False, n_states: int | None = None) -> np.ndarray:
    """Ascent direction sum_t w_t (G_t - b(s_t)) grad log pi(a_t|s_t).

    ``policy`` has a softmax head. States are one-hot encoded when
    ``n_states`` is given, otherwise they are taken as feature rows.
    ``baseline`` is a callable on feature rows, an array over states or a scalar.
    """
    x = _as_features(trajectory.states, n_states)
    a = trajectory.actions
    G = _reward_to_go(trajectory.rewards, gamma)
    if baseline is None:
        b = 0.0
    elif callable(baseline):
        b = np.asarray(baseline(x), dtype=float)
    else:
        b = np.asarray(baseline, dtype=float)
        if b.ndim == 1:
            b = b[trajectory.states]
    w = gamma ** np.arange(len(a)) if discount_weight else np.ones(len(a))
    coef = w * (G - b)

    def loss_fn(model):
        logp = ad.gather(ad.log_softmax(model(x)), a)
        return -ad.vsum(logp * coef)

    g, _ = grad(policy, loss_fn)
    return -g


def reinforce_update(policy: Approximator, trajectory: Trajectory, eta: float, gamma: float,
                     baseline=None, discount_weight: bool = False,
                     n_states: int | None = None) -> Approximator:
    """theta += eta * REINFORCE estimate. Returns a new approximator."""
    g = reinforce_grad(policy, trajectory, gamma, baseline, discount_weight, n_states)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite policy gradient")
    out = policy.clone()
    out.params.data = out.params.data + eta * g
    return out


# --------------------------------------------------------- advantage targets
def gae(rewards, values, dones, gamma: float, lam: float, next_values=None,
        episode_ends=None) -> AdvantageBatch:
    """Generalized advantage estimates by backward recursion.

    Parameters
    ----------
    rewards, dones : array, shape (T,)
    values : array, shape (T + 1,)
        v(s_0), ..., v(s_T). The last entry bootstraps the step after the
        final transition and is ignored when that transition is terminal.
    next_values : array, shape (T,), optional
        Explicit v(s_{t+1}) per step, for rollouts that cross episode
        boundaries. Overrides ``values[1:]``.
    episode_ends : array of bool, shape (T,), optional
        Steps after which the recursion restarts (terminal or truncated).
        Defaults to ``dones``.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=bool)
    T = r.shape[0]
    if v.shape[0] != T + 1 or d.shape[0] != T:
        raise ValueError("need len(values) == len(rewards) + 1 == len(dones) + 1")
    nv = v[1:] if next_values is None else np.asarray(next_values, dtype=float)
    if nv.shape[0] != T:
        raise ValueError("next_values length mismatch")
    cut = d if episode_ends is None else np.asarray(episode_ends, dtype=bool)
    delta = r + gamma * np.where(d, 0.0, nv) - v[:T]
    adv = np.zeros(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        acc = delta[t] + (0.0 if cut[t] else gamma * lam * acc)
        adv[t] = acc
    return AdvantageBatch(adv, adv + v[:T], dones=d)


def vtrace_targets(rewards, values, dones, target_probs, behavior_probs, gamma: float,
                   c_bar: float = 1.0, rho_bar: float = 1.0, n: int | None = None) -> np.ndarray:
    """V-trace value targets.

    ``values`` has length T + 1 (bootstrap value last). ``target_probs`` and
    ``behavior_probs`` are pi(a_t|s_t) and mu(a_t|s_t) of the taken actions.
    With ``n=None`` the full backward recursion
    v_i = V_i + rho_i delta_i + gamma c_i (v_{i+1} - V_{i+1}) is used. A
    finite ``n`` truncates the sum after n terms.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=bool)
    pi = np.asarray(target_probs, dtype=float)
    mu = np.asarray(behavior_probs, dtype=float)
    T = r.shape[0]
    if v.shape[0] != T + 1 or pi.shape[0] != T or mu.shape[0] != T or d.shape[0] != T:
        raise ValueError("length mismatch")
    if np.any(mu <= 0):
        raise ValueError("behavior probability of a taken action is zero")
    ratio = pi / mu
    c = np.minimum(c_bar, ratio)
    rho = np.minimum(rho_bar, ratio)
    delta = r + gamma * np.where(d, 0.0, v[1:]) - v[:T]
    out = np.empty(T)
    if n is None:
        acc = 0.0  # v_{i+1} - V(s_{i+1})
        for i in range(T - 1, -1, -1):
            acc = rho[i] * delta[i] + (0.0 if d[i] else gamma * c[i] * acc)
            out[i] = v[i] + acc
        return out
    if n < 1:
        raise ValueError("n must be >= 1")
    for i in range(T):
        acc, trace, disc = 0.0, 1.0, 1.0
        for t in range(i, min(i + n, T)):
            acc += disc * trace * rho[t] * delta[t]
            if d[t]:
                break
            trace *= c[t]
            disc *= gamma
        out[i] = v[i] + acc
    return out


def offpolicy_pg_grad(policy: Approximator, x, actions, rewards, dones, values, vs, rho,
                      gamma: float) -> np.ndarray:
    """Mean of rho_t grad log pi(a_t|s_t) (r_t + gamma v_{t+1} - V(s_t)).

    ``values`` has length T + 1. ``vs`` are V-trace targets of length T; the
    last bootstrap ``v_T`` is ``values[T]``. Returns an ascent direction.
    """
    r = np.asarray(rewards, dtype=float)
    d = np.asarray(dones, dtype=bool)
    v = np.asarray(values, dtype=float)
    vs_next = np.append(np.asarray(vs, dtype=float)[1:], v[-1])
    adv = np.asarray(rho, dtype=float) * (r + gamma * np.where(d, 0.0, vs_next) - v[:-1])
    a = np.asarray(actions, dtype=int)
    x = np.asarray(x, dtype=float)

    def loss_fn(model):
        logp = ad.gather(ad.log_softmax(model(x)), a)
        return -ad.vmean(logp * adv)

    g, _ = grad(policy, loss_fn)
    return -g


# ------------------------------------------------------------------ A2C / PPO
def entropy(logits) -> ad.Var:
    """Per-row entropy of a softmax over the last axis."""
    logp = ad.log_softmax(logits)
    return -ad.vsum(ad.exp(logp) * logp, axis=-1)


def _normalize(adv: np.ndarray) -> np.ndarray:
    sd = adv.std()
    return (adv - adv.mean()) / (sd + 1e-8) if adv.size > 1 else adv - adv.mean()


def a2c_loss(policy_out, value_out, actions, batch: AdvantageBatch, cfg: ACConfig,
             normalize: bool = False):
    """lambda_TD (V - sg q)^2 - lambda_PG sg(A) log pi(a|s) - lambda_ent H, step-averaged.

    ``policy_out`` are logits and ``value_out`` are state values, both Vars
    computed on the batch states. Returns ``(loss Var, parts dict)``.
    """
    a = np.asarray(actions, dtype=int)
    adv = _normalize(np.asarray(batch.advantages)) if normalize else np.asarray(batch.advantages)
    logp = ad.gather(ad.log_softmax(policy_out), a)
    H = entropy(policy_out)
    v_loss = ad.vmean(ad.square(value_out - ad.stop_gradient(batch.targets)))
    pg = ad.vmean(logp * ad.stop_gradient(adv))
    ent = ad.vmean(H)
    loss = cfg.lambda_td * v_loss - cfg.lambda_pg * pg - cfg.lambda_ent * ent
    return loss, {"policy_loss": -float(pg.value), "value_loss": float(v_loss.value),
                  "entropy": float(ent.value)}


def ppo_surrogate(logp_new, logp_old, adv, clip_eps: float):
    """Per-step min(rho A, clip(rho, 1-eps, 1+eps) A) with rho = exp(logp_new - logp_old)."""
    ratio = ad.exp(ad.as_var(logp_new) - ad.stop_gradient(logp_old))
    adv = np.asarray(adv, dtype=float)
    return ad.minimum(ratio * adv, ad.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def ppo_loss(policy_out, value_out, actions, batch: AdvantageBatch, cfg: ACConfig,
             normalize: bool | None = None):
    """Clipped-surrogate loss. Returns ``(loss Var, parts dict)``."""
    if batch.logp_behavior is None:
        raise ValueError("PPO needs old-policy log-probabilities")
    normalize = cfg.normalize_adv if normalize is None else normalize
    a = np.asarray(actions, dtype=int)
    adv = _normalize(np.asarray(batch.advantages)) if normalize else np.asarray(batch.advantages)
    logp = ad.gather(ad.log_softmax(policy_out), a)
    surr = ppo_surrogate(logp, batch.logp_behavior, adv, cfg.clip_eps)
    ratio = np.exp(logp.value - batch.logp_behavior)
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps))
    H = entropy(policy_out)
    v_loss = ad.vmean(ad.square(value_out - ad.stop_gradient(batch.targets)))
    pg = ad.vmean(surr)
    ent = ad.vmean(H)
    loss = cfg.lambda_td * v_loss - cfg.lambda_pg * pg - cfg.lambda_ent * ent
    return loss, {"policy_loss": -float(pg.value), "value_loss": float(v_loss.value),
                  "entropy": float(ent.value), "clip_fraction": clip_frac}


def ppo_update(policy: Approximator, value: Approximator, x, actions, batch: AdvantageBatch,
               cfg: ACConfig, optimizers) -> dict:
    """M full-batch epochs on the clipped objective. Advantages stay frozen.

    ``optimizers`` is a pair of :class:`AdaptiveOptimizer`. Parameters are
    updated in place. Returns the parts of the first epoch.
    """
    first = None
    for _ in range(cfg.epochs):
        def loss_fn(models):
            return ppo_loss(models[0](x), models[1](x), actions, batch, cfg)[0]

        parts = ppo_loss(policy.apply(policy.params.data, x), value.apply(value.params.data, x),
                         actions, batch, cfg)[1]
        first = parts if first is None else first
        (gp, gv), _ = joint_grad([policy, value], loss_fn)
        policy.params.data, _ = optimizers[0].step(policy.params.data, clip_grad_norm(gp, 10.0))
        value.params.data, _ = optimizers[1].step(value.params.data, clip_grad_norm(gv, 10.0))
    return first


@dataclass
class _Rollout:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    cut: np.ndarray
    logp: np.ndarray


def collect_rollout(env: TabularEnv, policy: Approximator, n_steps: int, rng, state: list,
                    horizon: int = 100) -> _Rollout:
    """Roll a one-hot softmax policy for ``n_steps`` with automatic resets.

    ``state`` is a mutable ``[current_state, steps_in_episode]`` pair carried
    across calls. Episodes longer than ``horizon`` are cut (not terminal).
    """
    S = env.n_states
    eye = np.eye(S)
    probs = policy.forward(eye)
    cdf = np.cumsum(probs, axis=1)
    out = {k: [] for k in ("s", "a", "r", "s_next", "done", "cut", "logp")}
    for _ in range(n_steps):
        s = state[0]
        a = _sample_cdf(cdf[s], rng.random())
        s2, r, done = env.step(a)
        state[1] += 1
        cut = done or state[1] >= horizon
        for k, v in zip(out, (s, a, r, s2, done, cut, np.log(probs[s, a]))):
            out[k].append(v)
        if cut:
            state[0], state[1] = env.reset(), 0
        else:
            state[0] = s2
    return _Rollout(*(np.array(out[k]) for k in out))


def _train_ac(mdp: TabularMDP, cfg: ACConfig, steps: int, seed: int, eta: float, kind: str,
              rollout: int, horizon: int, eval_every: int) -> tuple:
    S, A = mdp.n_states, mdp.n_actions
    eye = np.eye(S)
    policy = Approximator.linear(S, A, head="softmax")
    value = Approximator.linear(S, 1, head="scalar")
    opts = (AdaptiveOptimizer(eta), AdaptiveOptimizer(eta))
    env = TabularEnv(mdp, make_stream(seed, 0, "env"))
    rng = make_stream(seed, 0, kind)
    state = [env.reset(), 0]
    rows = []
    done_steps, update = 0, 0
    while done_steps < steps:
        n = min(rollout, steps - done_steps)
        ro = collect_rollout(env, policy, n, rng, state, horizon)
        done_steps += n
        x = eye[ro.s]
        v = value.forward(x)
        v_next = np.where(ro.done, 0.0, value.forward(eye[ro.s_next]))
        batch = gae(ro.r, np.append(v, 0.0), ro.done, cfg.gamma, cfg.gae_lambda,
                    next_values=v_next, episode_ends=ro.cut)
        if kind == "ppo":
            batch = replace(batch, logp_behavior=ro.logp)
            parts = ppo_update(policy, value, x, ro.a, batch, cfg, opts)
        else:
            def loss_fn(models):
                return a2c_loss(models[0](x), models[1](x), ro.a, batch, cfg,
                                normalize=cfg.normalize_adv)[0]

            (gp, gv), _ = joint_grad([policy, value], loss_fn)
            parts = a2c_loss(policy.apply(policy.params.data, x),
                             value.apply(value.params.data, x), ro.a, batch, cfg,
                             normalize=cfg.normalize_adv)[1]
            parts["clip_fraction"] = 0.0
            policy.params.data, _ = opts[0].step(policy.params.data, clip_grad_norm(gp, 10.0))
            value.params.data, _ = opts[1].step(value.params.data, clip_grad_norm(gv, 10.0))
        update += 1
        if update % eval_every == 0 or done_steps >= steps:
            ret = exact_objective(mdp, policy.apply(policy.params.data, eye).value, cfg.gamma)
        else:
            ret = float("nan")
        rows.append({"update": update, "step": done_steps, "mean_return": ret, **parts})
    return policy, value, rows


def train_a2c(mdp: TabularMDP, cfg: ACConfig | None = None, steps: int = 50_000, seed: int = 0,
              eta: float = 0.05, rollout: int = 16, horizon: int = 100, eval_every: int = 1):
    """Tabular-softmax A2C on one-hot states with Adam.

    ``mean_return`` in the per-update rows is the exact expected discounted
    return of the current stochastic policy from the start distribution.

    Returns ``(policy, value, rows)``.
    """
    cfg = cfg or ACConfig(normalize_adv=False)
    return _train_ac(mdp, cfg, steps, seed, eta, "a2c", rollout, horizon, eval_every)


def train_ppo(mdp: TabularMDP, cfg: ACConfig | None = None, steps: int = 50_000, seed: int = 0,
              eta: float = 0.05, horizon: int = 100, eval_every: int = 1):
    """Tabular-softmax PPO with ``cfg.rollout`` steps and ``cfg.epochs`` epochs per update."""
    cfg = cfg or ACConfig()
    return _train_ac(mdp, cfg, steps, seed, eta, "ppo", cfg.rollout, horizon, eval_every)


# --------------------------------------------------------------------- SAC
def soft_value(q, probs, alpha: float) -> np.ndarray:
    """V(s) = sum_a pi(a|s) [Q(s,a) - alpha log pi(a|s)], with 0 log 0 = 0."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(probs, dtype=float)
    logp = np.log(np.where(p > 0, p, 1.0))
    return np.sum(np.where(p > 0, p * (q - alpha * logp), 0.0), axis=-1)


def soft_value_iteration(mdp: TabularMDP, alpha: float, gamma: float, tol: float = 1e-12,
                         max_sweeps: int = 100_000) -> tuple:
    """Fixed point of the soft Bellman operator with the Boltzmann policy.

    Returns ``(Q, pi)`` with pi(a|s) proportional to exp(Q(s,a) / alpha).
    """
    S, A = mdp.n_states, mdp.n_actions
    r_sa = (mdp.trans * mdp.reward).sum(axis=2)
    Q = np.zeros((S, A))
    for _ in range(max_sweeps):
        if alpha > 0:
            m = Q.max(axis=1)
            V = m + alpha * np.log(np.exp((Q - m[:, None]) / alpha).sum(axis=1))
        else:
            V = Q.max(axis=1)
        V[mdp.terminal] = 0.0
        Q_new = r_sa + gamma * mdp.trans @ V
        Q_new[mdp.terminal] = 0.0
        if np.max(np.abs(Q_new - Q)) < tol:
            Q = Q_new
            break
        Q = Q_new
    pi = softmax_table(Q / alpha) if alpha > 0 else np.eye(A)[Q.argmax(axis=1)]
    return Q, pi


def _alpha_step(log_alpha: float, ent: float, target: float, lr: float) -> float:
    # J(alpha) = alpha (H - target); gradient in log alpha is alpha (H - target)
    alpha = np.exp(log_alpha)
    out = log_alpha - lr * alpha * (ent - target)
    if not np.isfinite(out):
        raise FloatingPointError("non-finite temperature")
    return float(out)


def sac_discrete_update(policy: Approximator, critics: list, targets: list, batch: dict,
                        cfg: ACConfig, alpha: float, optimizers: dict, subset: int = 2) -> dict:
    """One SAC-Discrete step: critics, actor, then temperature.

    Critic targets use exact action expectations under the current policy
    and the minimum over the first ``subset`` target critics. The actor
    minimizes sum_a pi(a|s)[alpha log pi(a|s) - Qhat(s,a)] with Qhat the
    mean online critic. ``targets`` are :class:`TargetCopy` shadows, updated
    in place by EMA with ``cfg.rho``.

    Returns the stats dict including the new ``alpha``.
    """
    if subset > len(critics):
        raise ValueError("subset M cannot exceed the number of critics N")
    if not np.isfinite(alpha):
        raise FloatingPointError("non-finite temperature")
    s, a, r = batch["s"], np.asarray(batch["a"], dtype=int), np.asarray(batch["r"], float)
    s2, done = batch["s_next"], np.asarray(batch["done"], dtype=bool)
    p2 = policy.forward(s2)
    qmin = np.min([critics[i].forward(s2, params=targets[i].params) for i in range(subset)],
                  axis=0)
    y = r + cfg.gamma * np.where(done, 0.0, soft_value(qmin, p2, alpha))
    c_losses = []
    for i, q in enumerate(critics):
        g, loss = grad(q, lambda m: ad.vmean(ad.square(ad.gather(m(s), a) - y)))
        q.params.data, _ = optimizers["critic"][i].step(q.params.data, g)
        targets[i] = ema_update(targets[i], q.params.data, cfg.rho)
        c_losses.append(loss)
    q_hat = np.mean([q.forward(s) for q in critics], axis=0)

    def actor_loss(m):
        logp = ad.log_softmax(m(s))
        return ad.vmean(ad.vsum(ad.exp(logp) * (alpha * logp - q_hat), axis=-1))

    g, a_loss = grad(policy, actor_loss)
    policy.params.data, _ = optimizers["actor"].step(policy.params.data, g)
    p = policy.forward(s)
    ent = float(np.mean(-np.sum(p * np.log(np.maximum(p, 1e-300)), axis=-1)))
    if cfg.learn_alpha:
        target = 0.5 * np.log(p.shape[-1]) if cfg.target_entropy is None else cfg.target_entropy
        alpha = float(np.exp(_alpha_step(np.log(alpha), ent, target, cfg.alpha_lr)))
    return {"critic_loss": float(np.mean(c_losses)), "policy_loss": a_loss, "entropy": ent,
            "alpha": alpha}


def gaussian_log_prob(a, mean, log_std):
    """Diagonal Gaussian log density summed over the last axis (Vars or arrays)."""
    a, mean, log_std = ad.as_var(a), ad.as_var(mean), ad.as_var(log_std)
    z = (a - mean) / ad.exp(log_std)
    return ad.vsum(-0.5 * ad.square(z) - log_std - 0.5 * np.log(2 * np.pi), axis=-1)


def sac_gaussian_update(policy: Approximator, critics: list, targets: list, batch: dict,
                        cfg: ACConfig, alpha: float, optimizers: dict, rng, subset: int = 2,
                        critic_input=None) -> dict:
    """One continuous-action SAC step with the reparameterized Gaussian actor.

    ``policy`` has a gaussian head. Critics take ``critic_input(s, a)``
    (default: concatenation) and have a scalar head. Actions are unbounded.
    """
    if subset > len(critics):
        raise ValueError("subset M cannot exceed the number of critics N")
    if not np.isfinite(alpha):
        raise FloatingPointError("non-finite temperature")
    feat = critic_input or (lambda s_, a_: ad.concat([ad.as_var(s_), ad.as_var(a_)], axis=-1))
    s, a = np.asarray(batch["s"], float), np.asarray(batch["a"], float)
    r, done = np.asarray(batch["r"], float), np.asarray(batch["done"], dtype=bool)
    s2 = np.asarray(batch["s_next"], float)
    d = policy.arch["out_dim"]
    out2 = policy.forward(s2)
    mu2, ls2 = out2[:, :d], out2[:, d:]
    a2 = mu2 + np.exp(ls2) * rng.standard_normal(mu2.shape)
    logp2 = gaussian_log_prob(a2, mu2, ls2).value
    x2 = feat(s2, a2).value
    qmin = np.min([critics[i].forward(x2, params=targets[i].params) for i in range(subset)],
                  axis=0)
    y = r + cfg.gamma * np.where(done, 0.0, qmin - alpha * logp2)
    x = feat(s, a).value
    c_losses = []
    for i, q in enumerate(critics):
        g, loss = grad(q, lambda m: ad.vmean(ad.square(m(x) - y)))
        q.params.data, _ = optimizers["critic"][i].step(q.params.data, g)
        targets[i] = ema_update(targets[i], q.params.data, cfg.rho)
        c_losses.append(loss)
    eps = rng.standard_normal((s.shape[0], d))

    def actor_loss(m):
        out = m(s)
        mu, ls = out[:, :d], out[:, d:]
        act = mu + ad.exp(ls) * eps
        logp = gaussian_log_prob(act, mu, ls)
        xa = feat(s, act)
        q_hat = sum(q.apply(q.params.data, xa) for q in critics) / float(len(critics))
        return ad.vmean(alpha * logp - q_hat), logp

    g, a_loss = grad(policy, lambda m: actor_loss(m)[0])
    policy.params.data, _ = optimizers["actor"].step(policy.params.data, g)
    ls = policy.forward(s)[:, d:]
    ent = float(np.mean(np.sum(ls + 0.5 * np.log(2 * np.pi * np.e), axis=-1)))
    if cfg.learn_alpha:
        target = -float(d) if cfg.target_entropy is None else cfg.target_entropy
        alpha = float(np.exp(_alpha_step(np.log(alpha), ent, target, cfg.alpha_lr)))
    return {"critic_loss": float(np.mean(c_losses)), "policy_loss": a_loss, "entropy": ent,
            "alpha": alpha}


def train_sac_discrete(mdp: TabularMDP, alpha: float, steps: int = 2000, seed: int = 0,
                       cfg: ACConfig | None = None, eta: float = 0.05, batch_size: int = 32,
                       n_critics: int = 2) -> tuple:
    """SAC-Discrete on one-hot states with a uniform-behavior replay buffer.

    Transitions are drawn from uniformly random (s, a) pairs over
    non-terminal states, which isolates the fixed point of the soft
    Bellman operator from exploration effects.

    Returns ``(policy, critics, stats)`` where ``stats`` holds the final
    per-state entropies and the temperature trail.
    """
    cfg = cfg or ACConfig(alpha=alpha)
    rng = make_stream(seed, 0, "sac")
    S, A = mdp.n_states, mdp.n_actions
    eye = np.eye(S)
    policy = Approximator.linear(S, A, head="softmax")
    critics = [Approximator.linear(S, A, head="vector", init="uniform", seed=seed * 31 + i)
               for i in range(n_critics)]
    targets = [TargetCopy.of(q, cfg.rho) for q in critics]
    opts = {"actor": AdaptiveOptimizer(eta),
            "critic": [AdaptiveOptimizer(eta) for _ in critics]}
    live = np.flatnonzero(~mdp.terminal)
    tcdf = np.cumsum(mdp.trans, axis=2)
    alphas = []
    for _ in range(steps):
        s = live[rng.integers(live.size, size=batch_size)]
        a = rng.integers(A, size=batch_size)
        s2 = np.minimum((rng.random(batch_size)[:, None] >= tcdf[s, a]).sum(axis=1), S - 1)
        batch = {"s": eye[s], "a": a, "r": mdp.reward[s, a, s2], "s_next": eye[s2],
                 "done": mdp.terminal[s2]}
        st = sac_discrete_update(policy, critics, targets, batch, cfg, alpha, opts)
        alpha = st["alpha"]
        alphas.append(alpha)
    p = policy.forward(eye[live])
    ent = -np.sum(p * np.log(np.maximum(p, 1e-300)), axis=-1)
    return policy, critics, {"entropy": ent, "mean_entropy": float(ent.mean()),
                             "alpha": np.array(alphas)}


# ---------------------------------------------------------------------- TD3
def td3_target_action(mu_next, noise, clip_c: float):
    """Target-policy smoothing: mu(s') + clip(noise, -c, c)."""
    return np.asarray(mu_next, dtype=float) + np.clip(noise, -clip_c, clip_c)


def td3_update(actor: Approximator, critics: list, actor_target: TargetCopy, critic_targets: list,
               batch: dict, cfg: ACConfig, rng, step: int, optimizers: dict,
               critic_input=None, action_bounds=None) -> dict:
    """One TD3 step; parameters and EMA targets are updated in place.

    The critics regress on y = r + gamma min_i Qbar_i(s', mu_bar(s') + clipped
    noise). Every ``cfg.policy_delay`` calls the actor ascends
    Q_1(s, mu(s)) through the action, then all targets move by EMA. A
    single critic with ``td3_noise=0`` and ``policy_delay=1`` is DDPG.

    Returns a stats dict. ``actor_target`` and ``critic_targets`` are
    lists so they can be replaced in place; pass ``[TargetCopy]`` for the actor.
    """
    feat = critic_input or (lambda s_, a_: ad.concat([ad.as_var(s_), ad.as_var(a_)], axis=-1))
    s, a = np.asarray(batch["s"], float), np.asarray(batch["a"], float)
    r, done = np.asarray(batch["r"], float), np.asarray(batch["done"], dtype=bool)
    s2 = np.asarray(batch["s_next"], float)
    mu2 = actor.forward(s2, params=actor_target[0].params)
    noise = cfg.td3_noise * rng.standard_normal(mu2.shape) if cfg.td3_noise > 0 else 0.0
    a2 = td3_target_action(mu2, noise, cfg.td3_clip)
    if action_bounds is not None:
        a2 = np.clip(a2, *action_bounds)
    x2 = feat(s2, a2).value
    qs = [q.forward(x2, params=t.params) for q, t in zip(critics, critic_targets)]
    y = r + cfg.gamma * np.where(done, 0.0, np.min(qs[:2], axis=0))
    x = feat(s, a).value
    c_losses = []
    for i, q in enumerate(critics):
        g, loss = grad(q, lambda m: ad.vmean(ad.square(m(x) - y)))
        q.params.data, _ = optimizers["critic"][i].step(q.params.data, clip_grad_norm(g, 10.0))
        c_losses.append(loss)
    stats = {"critic_loss": float(np.mean(c_losses)), "actor_objective": float("nan"),
             "actor_updated": False}
    if step % cfg.policy_delay == 0:
        q1 = critics[0]

        def neg_obj(m):
            return -ad.vmean(q1.apply(q1.params.data, feat(s, m(s))))

        g, loss = grad(actor, neg_obj)
        actor.params.data, _ = optimizers["actor"].step(actor.params.data, clip_grad_norm(g, 10.0))
        stats["actor_objective"] = -loss
        stats["actor_updated"] = True
        actor_target[0] = ema_update(actor_target[0], actor.params.data, cfg.rho)
        for i, q in enumerate(critics):
            critic_targets[i] = ema_update(critic_targets[i], q.params.data, cfg.rho)
    return stats


def lqr_step(s, a):
    """s' = s + a, r = -s^2 - 0.1 a^2."""
    return s + a, -(s * s) - 0.1 * a * a


LQR_STARTS = np.array([-1.0, -0.5, 0.5, 1.0])


def lqr_cost(gain_or_actor, horizon: int = 50, starts=LQR_STARTS) -> float:
    """Mean undiscounted cost of a linear controller a = -K s (float) or an actor."""
    s = np.array(starts, dtype=float)
    total = np.zeros_like(s)
    for _ in range(horizon):
        if callable(gain_or_actor):
            a = np.asarray(gain_or_actor(s[:, None]), dtype=float).reshape(-1)
        else:
            a = -float(gain_or_actor) * s
        s, r = lqr_step(s, a)
        total -= r
    return float(total.mean())


def lqr_best_gain(grid=None, horizon: int = 50) -> tuple:
    """Grid search over proportional gains K in [0, 2]. Returns ``(K, cost)``."""
    grid = np.linspace(0.0, 2.0, 201) if grid is None else np.asarray(grid)
    costs = np.array([lqr_cost(k, horizon) for k in grid])
    i = int(np.argmin(costs))
    return float(grid[i]), float(costs[i])


def _lqr_features(s, a):
    s, a = ad.as_var(s), ad.as_var(a)
    return ad.concat([s * s, s * a, a * a, s, a, ad.as_var(np.ones(s.shape))], axis=-1)


def train_td3_lqr(seed: int = 0, steps: int = 3000, cfg: ACConfig | None = None,
                  eta_actor: float = 1e-2, eta_critic: float = 5e-2, batch_size: int = 64,
                  explore_std: float = 0.3, episode_len: int = 20, warmup: int = 200) -> tuple:
    """TD3 on the 1-D point mass with a linear actor and quadratic-feature critics.

    Returns ``(actor, stats)`` with the final evaluation ``cost`` and
    learned ``gain`` (a = -gain * s).
    """
    cfg = cfg or ACConfig(gamma=0.95, td3_noise=0.1, td3_clip=0.3, rho=0.99)
    rng = make_stream(seed, 0, "td3")
    actor = Approximator.linear(1, 1, head="vector")
    critics = [Approximator.linear(6, 1, head="scalar", init="uniform", seed=seed * 17 + i)
               for i in range(2)]
    actor_t = [TargetCopy.of(actor, cfg.rho)]
    critic_t = [TargetCopy.of(q, cfg.rho) for q in critics]
    opts = {"actor": AdaptiveOptimizer(eta_actor),
            "critic": [AdaptiveOptimizer(eta_critic) for _ in critics]}
    buf = {k: [] for k in ("s", "a", "r", "s_next")}
    s, t_ep = float(rng.uniform(-1, 1)), 0
    for step in range(steps):
        a = float(actor.forward(np.array([[s]]))[0, 0]) + explore_std * rng.standard_normal()
        a = float(np.clip(a, -2.0, 2.0))
        s2, r = lqr_step(s, a)
        for k, v in zip(buf, (s, a, r, s2)):
            buf[k].append(v)
        t_ep += 1
        s = s2
        if t_ep >= episode_len or abs(s) > 5.0:
            s, t_ep = float(rng.uniform(-1, 1)), 0
        if step < warmup:
            continue
        idx = rng.integers(len(buf["s"]), size=batch_size)
        batch = {"s": np.array(buf["s"])[idx, None], "a": np.array(buf["a"])[idx, None],
                 "r": np.array(buf["r"])[idx], "s_next": np.array(buf["s_next"])[idx, None],
                 "done": np.zeros(batch_size, dtype=bool)}
        td3_update(actor, critics, actor_t, critic_t, batch, cfg, rng, step, opts,
                   critic_input=_lqr_features, action_bounds=(-2.0, 2.0))
    gain = -float(actor.params.data[0])
    return actor, {"gain": gain, "cost": lqr_cost(lambda x: actor.forward(x))}
