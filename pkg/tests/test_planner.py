import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlworkbench.dp import value_iteration
from rlworkbench.envs import TabularEnv
from rlworkbench.planner import (PlanProblem, cem_plan, enumerate_sequences, evaluate_sequence,
                                 mcts_search, mpc_controller, mppi_plan, multinomial_resample,
                                 random_shooting, smc_mpc, tabular_model, traces_to_json)
from rlworkbench.rng import make_stream

from conftest import DOWN, S1, S2, S3, S_T2


def quad(target=3.0, scale=1.0):
    return PlanProblem(lambda s, a, rng: (s, -scale * float((a[0] - target) ** 2), False),
                       horizon=1, bounds=([-10.0], [10.0]))


def two_arms(rewards=(1.0, 0.0)):
    return PlanProblem(lambda s, a, rng: (a, rewards[a], True), horizon=1, n_actions=2)


def chain(depth, good=0):
    """Binary tree of the given depth; only the all-``good`` path pays 1."""
    def model(s, a, rng):
        path = s + (a,)
        r = 1.0 if len(path) == depth and all(x == good for x in path) else 0.0
        return path, r, len(path) == depth
    return PlanProblem(model, horizon=depth, n_actions=2)


def grid_problem(grid, H, value=None):
    return PlanProblem(tabular_model(grid), horizon=H, gamma=0.9, n_actions=2, value=value)


# --- problem and evaluation ------------------------------------------------------

def test_problem_validation():
    with pytest.raises(ValueError):
        PlanProblem(lambda s, a, r: None, horizon=0, n_actions=2)
    with pytest.raises(ValueError):
        PlanProblem(lambda s, a, r: None, horizon=1)
    with pytest.raises(ValueError):
        PlanProblem(lambda s, a, r: None, horizon=1, bounds=([1.0], [0.0]))


def test_evaluate_sequence_gridworld(grid):
    prob = grid_problem(grid, 3)
    assert evaluate_sequence(prob, S1, [DOWN, DOWN, DOWN]) == pytest.approx(0.81)
    assert evaluate_sequence(prob, S3, [DOWN, DOWN, DOWN]) == 1.0
    with_v = grid_problem(grid, 1, value=lambda s: 10.0)
    assert evaluate_sequence(with_v, S1, [DOWN]) == pytest.approx(9.0)


# --- random shooting ---------------------------------------------------------------

def test_enumeration_gives_greedy_argmax():
    res = random_shooting(two_arms((0.2, 0.7)), 0, candidates=enumerate_sequences(two_arms()))
    assert res.action == 1
    assert res.scores.tolist() == [0.2, 0.7]


def test_single_sample_returns_its_head():
    prob = chain(3)
    rng = make_stream(0, 0, "rs")
    seq = prob.sample_sequence(make_stream(0, 0, "rs"))
    res = random_shooting(prob, (), n_samples=1, rng=rng)
    assert res.action == int(seq[0])


def test_coverage_bound():
    depth, n = 3, 8
    p = 0.5 ** depth
    hits = [random_shooting(chain(depth), (), n, make_stream(s, 0, "cov")).action == 0
            for s in range(400)]
    # success needs the rewarding path sampled, else ties pick the first draw
    bound = 1 - (1 - p) ** n
    assert np.mean(hits) >= bound - 3 * math.sqrt(bound * (1 - bound) / 400)


def test_budget_monotonicity_paired():
    prob = chain(4)
    means = []
    for n in (1, 4, 16, 64):
        vals = []
        for s in range(100):
            res = random_shooting(prob, (), n, make_stream(s, 0, "paired"))
            vals.append(res.scores.max())
        means.append(np.mean(vals))
    assert all(a <= b for a, b in zip(means, means[1:]))


def test_shooting_needs_samples():
    with pytest.raises(ValueError):
        random_shooting(chain(2), (), 0, make_stream(0))
    with pytest.raises(ValueError):
        enumerate_sequences(quad())


# --- CEM ------------------------------------------------------------------------------

def test_cem_quadratic():
    res = cem_plan(quad(), 0, make_stream(0, 0, "cem"), iterations=50, population=64)
    assert abs(float(res.action[0]) - 3.0) < 1e-2


def test_cem_no_selection_pressure():
    flat = PlanProblem(lambda s, a, rng: (s, 0.0, False), horizon=1, bounds=([-10.0], [10.0]))
    drifts = []
    for seed in range(30):
        res = cem_plan(flat, 0, make_stream(seed, 0, "flat"), iterations=1, population=64,
                       elite_frac=1.0, init_std=1.0)
        drifts.append(float(res.action[0]))
    # one refit of 64 N(0, 1) draws has std 1/8
    assert abs(np.mean(drifts)) < 3 * (1 / 8) / math.sqrt(30)


def test_cem_bimodal_lands_on_a_peak():
    def f(a):
        return max(-(a + 2.0) ** 2, -(a - 2.0) ** 2)
    prob = PlanProblem(lambda s, a, rng: (s, float(f(a[0])), False), horizon=1,
                       bounds=([-5.0], [5.0]))
    res = cem_plan(prob, 0, make_stream(1, 0, "bimodal"), iterations=60, population=64,
                   std_floor=1e-6)
    grid = np.linspace(-5, 5, 100_001)
    peak = max(f(x) for x in grid[::100])
    assert f(float(res.action[0])) >= peak - 1e-3


def test_cem_elite_invariant_to_positive_scaling():
    a = cem_plan(quad(scale=1.0), 0, make_stream(2, 0, "scale"), iterations=5)
    b = cem_plan(quad(scale=7.5), 0, make_stream(2, 0, "scale"), iterations=5)
    assert np.array_equal(a.sequence, b.sequence)


def test_cem_argument_errors():
    with pytest.raises(ValueError):
        cem_plan(two_arms(), 0, make_stream(0))
    with pytest.raises(ValueError):
        cem_plan(quad(), 0, make_stream(0), population=8, elite_frac=0.1)


# --- MPPI -------------------------------------------------------------------------------

def test_mppi_zero_temperature_equals_shooting_choice():
    prob = quad()
    res = mppi_plan(prob, 0, make_stream(0, 0, "mppi"), temperature=0.0)
    best = res.info["samples"][int(np.argmax(res.scores))]
    assert np.array_equal(res.sequence, best)
    shoot = random_shooting(prob, 0, candidates=res.info["samples"])
    assert np.array_equal(shoot.sequence, res.sequence)


def test_mppi_infinite_temperature_is_mean():
    res = mppi_plan(quad(), 0, make_stream(0, 0, "mppi"), temperature=1e12)
    assert np.allclose(res.info["weights"], 1 / 64, atol=1e-9)
    assert np.allclose(res.sequence, res.info["samples"].mean(axis=0), atol=1e-9)


def test_mppi_beats_random_shooting_on_tracking():
    target = np.array([1.0, 0.5, -0.5, 0.0])

    def model(s, a, rng):
        x, t = s
        x2 = x + float(a[0])
        return (x2, t + 1), -(x2 - target[min(t, 3)]) ** 2, False

    prob = PlanProblem(model, horizon=4, bounds=([-2.0], [2.0]))

    def closed_loop(plan_fn, seed):
        rng = make_stream(seed, 0, "track")
        s, cost, prev = (0.0, 0), 0.0, None
        for _ in range(10):
            res = plan_fn(s, rng, prev)
            prev = res.sequence
            s, r, _ = model(s, res.action, rng)
            cost -= r
            s = (s[0], s[1] % 4)
        return cost

    mppi = [closed_loop(lambda s, rng, prev: mppi_plan(prob, s, rng, population=32, prev=prev),
                        seed) for seed in range(20)]
    rs = [closed_loop(lambda s, rng, prev: random_shooting(prob, s, 32, rng), seed)
          for seed in range(20)]
    assert np.mean(mppi) <= np.mean(rs)


# --- SMC --------------------------------------------------------------------------------

def uniform_proposal(s, rng):
    return int(rng.integers(2)), math.log(0.5)


def test_smc_single_particle_is_policy_rollout():
    prob = chain(3)
    res = smc_mpc(prob, (), uniform_proposal, lambda s: 0.0, 1, make_stream(0, 0, "smc"))
    first = int(make_stream(0, 0, "smc").integers(2))
    assert res.action == first
    assert res.info["ess"] == [1.0] * 3


def test_smc_uniform_weights_stay_uniform():
    flat = PlanProblem(lambda s, a, rng: (s + (a,), 0.0, False), horizon=3, n_actions=2)
    res = smc_mpc(flat, (), uniform_proposal, lambda s: 0.0, 16, make_stream(0, 0, "u"))
    assert np.allclose(res.info["ess"], 16.0)


def test_smc_finds_rewarding_leaf():
    def tree(s, a, rng):
        path = s + (a,)
        return path, 5.0 if path == (0, 0) else 0.0, len(path) == 2

    prob = PlanProblem(tree, horizon=2, n_actions=2)
    rng = make_stream(3, 0, "smc-tree")
    picks = [smc_mpc(prob, (), uniform_proposal, lambda s: 0.0, 64, rng).action
             for _ in range(100)]
    assert np.mean(np.array(picks) == 0) >= 0.9


def test_multinomial_resample_unbiased():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    rng = make_stream(0, 0, "resample")
    counts = np.zeros(4)
    reps = 5000
    for _ in range(reps):
        counts += np.bincount(multinomial_resample(w, rng), minlength=4)
    expected = reps * 4 * w
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    # 3 degrees of freedom, 0.999 quantile
    assert chi2 < 16.27


def test_smc_needs_particles():
    with pytest.raises(ValueError):
        smc_mpc(chain(2), (), uniform_proposal, lambda s: 0.0, 0, make_stream(0))


# --- MCTS -------------------------------------------------------------------------------

def test_mcts_two_arms_visit_share():
    res = mcts_search(two_arms((1.0, 0.0)), 0, lambda s: np.ones(2), n_sim=100)
    assert res.info["visits"][0] / 100 >= 0.7
    assert res.action == 0


def test_mcts_temperature_zero_one_hot():
    res = mcts_search(two_arms((0.3, 0.6)), 0, lambda s: np.ones(2), n_sim=40, tau=0.0)
    assert res.scores.tolist() == [0.0, 1.0]


def test_mcts_prior_mass_on_one_action():
    res = mcts_search(two_arms((1.0, 0.0)), 0, lambda s: np.array([0.0, 1.0]), n_sim=30)
    assert res.info["visits"].tolist() == [0.0, 30.0]


def test_mcts_infinite_c_balances_visits():
    prob = PlanProblem(lambda s, a, rng: (a, float(a), True), horizon=1, n_actions=4)
    res = mcts_search(prob, 0, lambda s: np.ones(4), n_sim=41, c_uct=math.inf)
    v = res.info["visits"]
    assert v.max() - v.min() <= 1


def test_mcts_zero_c_exploits():
    res = mcts_search(two_arms((0.2, 0.9)), 0, lambda s: np.ones(2), n_sim=50, c_uct=0.0)
    assert res.info["visits"].tolist() == [1.0, 49.0]


def test_mcts_backup_discounts_and_bootstraps(grid):
    V = value_iteration(grid, 0.9)[0]
    prob = grid_problem(grid, 2, value=lambda s: V[s])
    res = mcts_search(prob, S1, lambda s: np.ones(2), n_sim=200)
    assert res.action == DOWN
    # root values are visit means, so exploratory leaves (each at most V*) pull them below V*
    assert res.info["Q"][DOWN] <= V[S1] + 1e-12
    assert res.info["Q"][DOWN] > res.info["Q"][1 - DOWN]
    leaf = grid_problem(grid, 1, value=lambda s: V[s])
    one = mcts_search(leaf, S1, lambda s: np.ones(2), n_sim=10)
    assert one.info["Q"][DOWN] == pytest.approx(0.9 * V[S2], abs=1e-12)


def test_mcts_errors():
    with pytest.raises(ValueError):
        mcts_search(quad(), 0, lambda s: np.ones(1))
    with pytest.raises(ValueError):
        mcts_search(two_arms(), 0, lambda s: np.array([-1.0, 2.0]))
    with pytest.raises(ValueError):
        mcts_search(two_arms(), 0, lambda s: np.ones(2), n_sim=0)


# --- MPC loop ---------------------------------------------------------------------------

def dp_path(grid, start=S1):
    _, Q, _ = value_iteration(grid, 0.9)
    s, out = start, [start]
    while not grid.terminal[s]:
        s = int(np.argmax(grid.trans[s, int(np.argmax(Q[s]))]))
        out.append(s)
    return out


def test_mpc_matches_dp_trajectory(grid):
    prob = grid_problem(grid, 3)
    seqs = enumerate_sequences(prob)
    env = TabularEnv(grid, make_stream(0), start_state=S1)
    tr = mpc_controller(env, lambda s: random_shooting(prob, s, candidates=seqs), 10)
    assert tr["states"] == dp_path(grid) == [S1, S2, S3, S_T2]
    assert tr["done"] and tr["rewards"] == [0.0, 0.0, 1.0]


def test_mpc_one_step_with_v_star_is_greedy(grid):
    V, Q, _ = value_iteration(grid, 0.9)
    prob = grid_problem(grid, 1, value=lambda s: V[s])
    seqs = enumerate_sequences(prob)
    env = TabularEnv(grid, make_stream(0), start_state=S1)
    tr = mpc_controller(env, lambda s: random_shooting(prob, s, candidates=seqs), 10)
    assert tr["actions"] == [int(np.argmax(Q[s])) for s in tr["states"][:-1]]


def test_mpc_replan_idempotent(grid):
    prob = grid_problem(grid, 3)
    seqs = enumerate_sequences(prob)
    plans = {}

    def planner(s):
        res = random_shooting(prob, s, candidates=seqs)
        assert np.array_equal(res.sequence, random_shooting(prob, s, candidates=seqs).sequence)
        plans[s] = res.sequence
        return res

    env = TabularEnv(grid, make_stream(0), start_state=S1)
    tr = mpc_controller(env, planner, 10)
    first = plans[S1]
    # the plan from s2 is the tail of the plan from s1
    assert plans[S2][0] == first[1]
    assert len(tr["records"]) == 3


def test_mpc_replan_every_executes_plan_prefix(grid):
    prob = grid_problem(grid, 3)
    seqs = enumerate_sequences(prob)
    env = TabularEnv(grid, make_stream(0), start_state=S1)
    tr = mpc_controller(env, lambda s: random_shooting(prob, s, candidates=seqs), 10,
                        replan_every=3)
    assert len(tr["records"]) == 1
    assert tr["states"] == [S1, S2, S3, S_T2]
    with pytest.raises(ValueError):
        mpc_controller(env, lambda s: None, 5, replan_every=0)


def test_trace_json_roundtrip_and_deterministic(grid):
    prob = grid_problem(grid, 2)
    env = TabularEnv(grid, make_stream(0), start_state=S1)
    tr = mpc_controller(env, lambda s: mcts_search(prob, s, lambda _: np.ones(2), n_sim=20), 5)
    text = traces_to_json(tr["records"])
    assert text == traces_to_json(tr["records"])
    back = json.loads(text)
    assert back[0]["state"] == S1 and "visit_share" in back[0]
    assert abs(sum(back[0]["visit_share"]) - 1.0) < 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_tabular_model_samples_support(seed):
    from rlworkbench.envs import make_random_mdp
    mdp = make_random_mdp(4, 2, seed=seed)
    model = tabular_model(mdp)
    rng = make_stream(seed, 0, "model")
    for _ in range(20):
        s, a = int(rng.integers(4)), int(rng.integers(2))
        s2, r, _ = model(s, a, rng)
        assert mdp.trans[s, a, s2] > 0
        assert r == mdp.reward[s, a, s2]
