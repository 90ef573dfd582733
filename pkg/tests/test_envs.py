import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlworkbench.dp import value_iteration
from rlworkbench.envs import (TabularEnv, TabularMDP, make_baird, make_maxbias, make_random_mdp,
                              make_two_goal_grid, rollout, shape_rewards)
from rlworkbench.rng import make_stream

from conftest import DOWN, S1, S2, S3, S_T1, S_T2, UP, always_down


def test_gridworld_rewards(grid):
    assert grid.reward[S3, DOWN, S_T2] == 1.0
    R = grid.reward.copy()
    R[S3, DOWN, S_T2] = 0.0
    assert np.all(R == 0.0)


def test_gridworld_chain(grid):
    assert grid.trans[S2, UP, S1] == 1.0
    assert grid.trans[S2, DOWN, S3] == 1.0
    # the top cell is walled off: up from s1 stays put
    assert grid.trans[S1, UP, S1] == 1.0


def test_gridworld_absorbing(grid):
    for t in (S_T1, S_T2):
        assert grid.terminal[t]
        assert np.all(grid.trans[t, :, t] == 1.0)
        assert np.all(grid.reward[t] == 0.0)


def test_gridworld_open_top_variant():
    from rlworkbench.envs import make_gridworld_1d

    m = make_gridworld_1d(top_terminal=True)
    assert m.trans[S1, UP, S_T1] == 1.0


def test_mdp_validation_rejects_bad_rows(grid):
    T = np.array(grid.trans)
    T[1, 0, 1] = 0.5
    with pytest.raises(ValueError):
        TabularMDP(T, grid.reward, grid.terminal, grid.init_dist)


def test_mdp_json_roundtrip(grid):
    back = TabularMDP.from_json(grid.to_json())
    assert np.array_equal(back.trans, grid.trans)
    assert np.array_equal(back.reward, grid.reward)
    assert np.array_equal(back.terminal, grid.terminal)


def test_baird_structure():
    mdp, X, b, pi = make_baird()
    assert np.allclose(mdp.trans[:, 0, :6], 1 / 6)
    assert np.all(mdp.reward == 0.0)
    assert X.shape == (7, 8)
    # V = 0 is representable by w = 0 and is the true value
    assert np.all(X @ np.zeros(8) == 0.0)
    assert np.allclose(b[:, 0], 6 / 7)
    assert np.all(pi[:, 1] == 1.0)


def test_maxbias_expected_return():
    env = make_maxbias(std=0.0)
    env.reset()
    assert env.step(env.LEFT) == (env.B, 0.0, False)
    for a in range(env.n_b_actions):
        env.reset()
        env.step(env.LEFT)
        _, r, done = env.step(a)
        assert done and r == -0.1


def test_maxbias_right_terminates():
    env = make_maxbias()
    env.reset()
    assert env.step(env.RIGHT) == (env.TERMINAL, 0.0, True)


def test_maxbias_noisy_mean():
    env = make_maxbias(rng=make_stream(0, 0, "mb"))
    rs = []
    for _ in range(20000):
        env.reset()
        env.step(env.LEFT)
        rs.append(env.step(3)[1])
    assert abs(np.mean(rs) + 0.1) < 3 * 1.0 / np.sqrt(len(rs))


def test_random_mdp_deterministic():
    a, b = make_random_mdp(6, 3, seed=4), make_random_mdp(6, 3, seed=4)
    assert np.array_equal(a.trans, b.trans) and np.array_equal(a.reward, b.reward)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 10_000))
def test_random_mdp_rows_normalized(n_s, n_a, seed):
    m = make_random_mdp(n_s, n_a, seed)
    assert np.all(m.trans >= 0)
    assert np.max(np.abs(m.trans.sum(axis=2) - 1.0)) <= 1e-12
    assert abs(m.init_dist.sum() - 1.0) <= 1e-12


def test_single_state_geometric_value():
    from rlworkbench.dp import policy_evaluation_exact

    m = make_random_mdp(1, 2, seed=3)
    pi = np.array([[0.3, 0.7]])
    V = policy_evaluation_exact(m, pi, 0.9)
    r = float(pi[0] @ m.reward[0, :, 0])
    assert V[0] == pytest.approx(r / 0.1, abs=1e-10)


def test_zero_potential_is_identity(grid):
    shaped = shape_rewards(grid, np.zeros(5), 0.9)
    assert np.array_equal(shaped.reward, grid.reward)


def test_shaping_shifts_qstar_on_gridworld(grid):
    phi = np.array([0.0, 0.3, -1.2, 2.0, 0.0])
    _, Q, pol = value_iteration(grid, 0.9, tol=1e-13)
    _, Qs, pols = value_iteration(shape_rewards(grid, phi, 0.9), 0.9, tol=1e-13)
    assert np.array_equal(pol, pols)
    assert np.allclose(Qs, Q - phi[:, None], atol=1e-10)


def test_shaping_rejects_terminal_potential(grid):
    with pytest.raises(ValueError):
        shape_rewards(grid, np.ones(5), 0.9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000), st.floats(0.0, 0.95))
def test_shaping_argmax_invariance_property(seed, gamma):
    m = make_random_mdp(6, 3, seed, n_terminal=1)
    phi = make_stream(seed, 0, "phi").normal(size=6)
    phi[m.terminal] = 0.0
    _, Q, _ = value_iteration(m, gamma, tol=1e-13)
    _, Qs, _ = value_iteration(shape_rewards(m, phi, gamma), gamma, tol=1e-13)
    assert np.allclose(Qs, Q - phi[:, None], atol=1e-8)


def test_rollout_always_down_return(grid):
    env = TabularEnv(grid, make_stream(0, 0, "env"))
    tr = rollout(env, always_down(), 10, make_stream(0, 1, "pol"))
    assert tr.states.tolist() == [S1, S2, S3]
    assert tr.dones[-1] and not tr.truncated
    assert tr.discounted_return(0.9) == pytest.approx(0.81, abs=1e-12)


def test_rollout_reproducible(grid):
    pi = np.full((5, 2), 0.5)
    a = rollout(TabularEnv(grid, make_stream(3, 0, "e")), pi, 50, make_stream(3, 1, "p"))
    b = rollout(TabularEnv(grid, make_stream(3, 0, "e")), pi, 50, make_stream(3, 1, "p"))
    assert a.to_csv() == b.to_csv()


def test_rollout_truncation_flag(grid):
    pi = np.zeros((5, 2))
    pi[:, UP] = 1.0
    tr = rollout(TabularEnv(grid), pi, 5, make_stream(0, 0, "p"))
    assert len(tr) == 5 and tr.truncated


def test_two_goal_grid_features():
    mdp, phi = make_two_goal_grid()
    assert mdp.n_states == 25 and phi.shape == (25, 2)
    assert phi[0, 0] == 1 and phi[24, 1] == 1 and phi.sum() == 2
    assert not mdp.terminal.any()
