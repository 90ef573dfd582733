import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlworkbench.dp import policy_evaluation_exact, value_iteration
from rlworkbench.envs import TabularMDP, make_random_mdp, make_two_goal_grid
from rlworkbench.rng import make_stream
from rlworkbench.successor import (SFTable, gpi_action, gpi_policy, learn_sr_td, sf_closed_form,
                                   sf_td_update, sr_closed_form, sr_td_update, sr_to_csv,
                                   value_from_sr, value_from_sr_sa)
from rlworkbench.td import sarsa_step

from conftest import S1, S2, S3, S_T2, always_down


def one_action(T):
    T = np.asarray(T, dtype=float)[:, None, :]
    n = T.shape[0]
    return TabularMDP(T, np.zeros_like(T), np.zeros(n, bool), np.full(n, 1.0 / n))


def random_policy(seed, S, A):
    return make_stream(seed, 0, "pol").dirichlet(np.ones(A), size=S)


def with_reward(mdp, R):
    return TabularMDP(mdp.trans, np.broadcast_to(R, mdp.trans.shape).copy(), mdp.terminal,
                      mdp.init_dist)


# --- closed form ------------------------------------------------------------------

def test_self_loop_geometric_series():
    M = sr_closed_form(one_action([[1.0]]), np.ones((1, 1)), 0.9).M
    assert M[0, 0] == pytest.approx(10.0, abs=1e-12)


def test_gridworld_always_down(grid):
    M = sr_closed_form(grid, always_down(), 0.9).M
    assert M[S1, S2] == pytest.approx(1.0, abs=1e-12)
    assert M[S1, S3] == pytest.approx(0.9, abs=1e-12)
    assert M[S1, S1] == 0.0
    # the goal self-loops, so it soaks up the rest of the geometric mass
    assert M[S1, S_T2] == pytest.approx(0.81 / 0.1, abs=1e-10)


def test_two_state_swap():
    g = 0.9
    M = sr_closed_form(one_action([[0.0, 1.0], [1.0, 0.0]]), np.ones((2, 1)), g).M
    assert M[0, 1] == pytest.approx(1 / (1 - g ** 2), abs=1e-12)
    assert M[0, 0] == pytest.approx(g / (1 - g ** 2), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), g=st.floats(0.0, 0.99))
def test_closed_form_bellman_identity_and_mass(seed, g):
    mdp = make_random_mdp(6, 3, seed=seed)
    pi = random_policy(seed, 6, 3)
    M = sr_closed_form(mdp, pi, g).M
    T_pi, _ = mdp.policy_model(pi)
    assert np.allclose(M, T_pi @ (np.eye(6) + g * M), atol=1e-10)
    assert np.all(M >= -1e-12)
    assert np.allclose(M.sum(axis=1), 1 / (1 - g), rtol=1e-9)


def test_closed_form_rejects_gamma_one(grid):
    with pytest.raises(ValueError):
        sr_closed_form(grid, always_down(), 1.0)


# --- TD learning -------------------------------------------------------------------

def test_td_fixed_point(grid):
    M = sr_closed_form(grid, always_down(), 0.9).M
    for s, s2 in ((S1, S2), (S2, S3), (S3, S_T2), (S_T2, S_T2)):
        assert np.allclose(sr_td_update(M, s, s2, 0.5, 0.9), M, atol=1e-12)


def test_unit_step_sets_row_to_target(grid):
    M0 = make_stream(0, 0, "m0").random((5, 5))
    M = sr_td_update(M0, S2, S3, 1.0, 0.9)
    want = 0.9 * M0[S3]
    want[S3] += 1.0
    assert np.array_equal(M[S2], want)
    assert np.array_equal(np.delete(M, S2, 0), np.delete(M0, S2, 0))


def test_unit_step_backward_sweep_is_exact(grid):
    M = np.zeros((5, 5))
    for s, s2 in ((S_T2, S_T2),) * 200 + ((S3, S_T2), (S2, S3), (S1, S2)):
        M = sr_td_update(M, s, s2, 1.0, 0.9)
    exact = sr_closed_form(grid, always_down(), 0.9).M
    for s in (S1, S2, S3):
        assert np.allclose(M[s], exact[s], atol=1e-8)


def test_learned_sr_matches_closed_form():
    mdp = make_random_mdp(5, 2, seed=0)
    pi = np.full((5, 2), 0.5)
    M = sr_closed_form(mdp, pi, 0.5).M
    M_td = learn_sr_td(mdp, pi, 0.5, 40_000, make_stream(0, 0, "sr"), lr_power=0.6,
                       n_chains=1024, average_from=0.5)
    assert np.max(np.abs(M_td - M)) <= 1e-3


def test_single_chain_is_sequential_update(grid):
    rng = make_stream(4, 0, "sr-seq")
    M = learn_sr_td(grid, always_down(), 0.9, 6, rng)
    # s1 -> s2 -> s3 -> goal -> goal -> goal -> goal with 1/n(s) steps
    want = np.zeros((5, 5))
    counts = np.zeros(5)
    for s, s2 in ((S1, S2), (S2, S3), (S3, S_T2)) + ((S_T2, S_T2),) * 3:
        counts[s] += 1
        want = sr_td_update(want, s, s2, 1 / counts[s], 0.9)
    assert np.allclose(M, want, atol=1e-15)


# --- values from the SR --------------------------------------------------------

def test_zero_and_indicator_reward(grid):
    M = sr_closed_form(grid, always_down(), 0.9)
    assert np.all(value_from_sr(M, np.zeros(5)) == 0.0)
    assert np.array_equal(value_from_sr(M, np.eye(5)[S3]), M.M[:, S3])
    with pytest.raises(ValueError):
        value_from_sr(M, np.zeros(4))


def test_value_from_sr_matches_policy_evaluation():
    worst = 0.0
    for seed in range(50):
        mdp = make_random_mdp(6, 3, seed=seed)
        pi = random_policy(seed, 6, 3)
        r_next = make_stream(seed, 1, "r").random(6)
        M = sr_closed_form(mdp, pi, 0.9)
        V = policy_evaluation_exact(with_reward(mdp, r_next[None, None, :]), pi, 0.9)
        worst = max(worst, float(np.max(np.abs(value_from_sr(M, r_next) - V))))
        # general R(s, a, s') rewards go through the one-step reward vector
        _, r_pi = mdp.policy_model(pi)
        V2 = policy_evaluation_exact(mdp, pi, 0.9)
        worst = max(worst, float(np.max(np.abs(value_from_sr_sa(M, r_pi, 0.9) - V2))))
    assert worst <= 1e-8


def test_gridworld_goal_reward_through_sr(grid):
    # entering the goal pays 1, but the goal's own self-loop must not be credited
    r_pi = grid.policy_model(always_down())[1]
    V = value_from_sr_sa(sr_closed_form(grid, always_down(), 0.9), r_pi, 0.9)
    assert V[[S1, S2, S3]] == pytest.approx([0.81, 0.9, 1.0], abs=1e-12)


def test_csv_export():
    M = np.array([[1.0, 0.5], [0.0, 2.0]])
    text = sr_to_csv(M)
    assert text.splitlines()[0] == "s,s_tilde,value"
    assert text.splitlines()[2] == "0,1,0.5"
    assert len(text.splitlines()) == 5


# --- successor features -------------------------------------------------------

def test_one_hot_features_reproduce_state_action_sr():
    mdp = make_random_mdp(4, 2, seed=3)
    pi = random_policy(3, 4, 2)
    psi = sf_closed_form(mdp, pi, np.eye(4), 0.9).psi
    M = sr_closed_form(mdp, pi, 0.9).M
    # psi(s, a) = sum_s' T(s,a,s') [e_s' + gamma M(s', .)]
    want = np.einsum("xas,sd->xad", mdp.trans, np.eye(4) + 0.9 * M)
    assert np.allclose(psi, want, atol=1e-10)
    assert np.allclose(np.einsum("sa,sad->sd", pi, psi), M, atol=1e-10)


def test_sf_td_with_zero_features_decays():
    psi0 = np.ones((3, 2, 2))
    psi = sf_td_update(psi0, 0, 1, 1, 0, np.zeros((3, 2)), 0.25, 0.9)
    # target is 0.9 psi(s', a') = 0.9, so the entry moves a quarter of the way
    assert np.allclose(psi[0, 1], 1 + 0.25 * (0.9 - 1))
    psi = sf_td_update(psi0, 0, 1, 1, 0, np.zeros((3, 2)), 0.25, 0.9, done=True)
    assert np.allclose(psi[0, 1], 0.75)
    with pytest.raises(ValueError):
        sf_td_update(psi0, 0, 0, 1, 0, np.zeros((3, 3)), 0.1, 0.9)
    with pytest.raises(ValueError):
        SFTable(np.zeros((3, 2, 2)), np.zeros((3, 3)))


def test_sf_matches_sarsa_on_matched_stream():
    mdp = make_random_mdp(5, 2, seed=1)
    pi = random_policy(1, 5, 2)
    phi = make_stream(1, 1, "phi").random((5, 3))
    w = np.array([0.5, -1.0, 2.0])
    rng = make_stream(1, 2, "stream")
    psi, Q = np.zeros((5, 2, 3)), np.zeros((5, 2))
    s = 0
    a = int(rng.choice(2, p=pi[s]))
    for t in range(20_000):
        s2 = int(rng.choice(5, p=mdp.trans[s, a]))
        a2 = int(rng.choice(2, p=pi[s2]))
        eta = 1 / (1 + t / 50) ** 0.7
        psi = sf_td_update(psi, s, a, s2, a2, phi, eta, 0.9)
        Q = sarsa_step(Q, (s, a, float(phi[s2] @ w), s2, a2, False), eta, 0.9)
        s, a = s2, a2
    assert np.max(np.abs(psi @ w - Q)) < 1e-2


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_sf_closed_form_satisfies_sarsa_bellman(seed):
    mdp = make_random_mdp(5, 2, seed=seed)
    pi = random_policy(seed, 5, 2)
    phi = make_stream(seed, 1, "phi").normal(size=(5, 3))
    w = make_stream(seed, 2, "w").normal(size=3)
    Q = sf_closed_form(mdp, pi, phi, 0.9).q(w)
    r = phi @ w
    V = np.sum(pi * Q, axis=1)
    residual = Q - np.einsum("xas,s->xa", mdp.trans, r + 0.9 * V)
    assert np.max(np.abs(residual)) < 1e-8


# --- GPI --------------------------------------------------------------------------

def test_gpi_single_policy_is_greedy():
    mdp = make_random_mdp(5, 3, seed=2)
    phi = make_stream(2, 0, "phi").random((5, 2))
    sf = sf_closed_form(mdp, random_policy(2, 5, 3), phi, 0.9)
    w = np.array([1.0, -0.3])
    for s in range(5):
        assert gpi_action([sf], w, s) == int(np.argmax(sf.q(w)[s]))


def test_gpi_ties_lowest_index():
    psi = np.zeros((1, 3, 2))
    assert gpi_action([psi, psi], np.ones(2), 0) == 0
    with pytest.raises(ValueError):
        gpi_action([], np.ones(2), 0)
    with pytest.raises(ValueError):
        gpi_policy([], np.ones(2))


def two_goal_library(g=0.9):
    grid, phi = make_two_goal_grid()
    lib = []
    for w_i in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
        _, _, pol = value_iteration(with_reward(grid, (phi @ w_i)[None, None, :]), g)
        lib.append((sf_closed_form(grid, pol, phi, g), pol))
    return grid, phi, lib


def test_gpi_on_training_task_is_no_worse():
    grid, phi, lib = two_goal_library()
    for (sf, pol), w in zip(lib, (np.array([1.0, 0.0]), np.array([0.0, 1.0]))):
        task = with_reward(grid, (phi @ w)[None, None, :])
        V_gpi = policy_evaluation_exact(task, gpi_policy([s for s, _ in lib], w), 0.9)
        assert np.all(V_gpi >= policy_evaluation_exact(task, pol, 0.9) - 1e-8)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-1.0, 1.0), b=st.floats(-1.0, 1.0))
def test_gpi_improves_on_every_constituent(a, b):
    grid, phi, lib = LIB
    w = np.array([a, b])
    task = with_reward(grid, (phi @ w)[None, None, :])
    V_gpi = policy_evaluation_exact(task, gpi_policy([s for s, _ in lib], w), 0.9)
    best = np.max([policy_evaluation_exact(task, pol, 0.9) for _, pol in lib], axis=0)
    assert np.all(V_gpi >= best - 1e-8)


LIB = two_goal_library()
