import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlworkbench._kernels import bandit_simulate
from rlworkbench.bandits import (BetaBelief, GaussBelief, RegretLedger, boltzmann_policy,
                                 epsilon_greedy, epsilon_greedy_probs, epsilon_z_greedy,
                                 regret_step, thompson_action, ucb_action, update_beta,
                                 update_gauss)
from rlworkbench.rng import make_stream


def test_beta_updates():
    b = update_beta(BetaBelief.uniform(1), 0, 1)
    assert (b.alpha[0], b.beta[0]) == (2.0, 1.0)
    b = update_beta(BetaBelief(np.array([2.0]), np.array([2.0])), 0, 0)
    assert (b.alpha[0], b.beta[0]) == (2.0, 3.0)


@given(st.integers(0, 200))
def test_beta_posterior_mean(k):
    b = BetaBelief.uniform(1)
    for _ in range(k):
        b = update_beta(b, 0, 1)
    assert b.mean[0] == pytest.approx((k + 1) / (k + 2))


def test_beta_rejects_nonbinary():
    with pytest.raises(ValueError):
        update_beta(BetaBelief.uniform(2), 0, 2)


def test_gauss_welford():
    g = GaussBelief.empty(1)
    xs = [1.0, 2.0, 4.0, 7.0]
    for x in xs:
        g = update_gauss(g, 0, x)
    assert g.mean[0] == pytest.approx(np.mean(xs))
    assert g.std_error()[0] == pytest.approx(np.std(xs, ddof=1) / 2.0)


@pytest.mark.parametrize("scores,pe,pb", [
    ((1.00, 9.00), (0.05, 0.95), (0.00, 1.00)),
    ((4.00, 6.00), (0.05, 0.95), (0.12, 0.88)),
    ((4.90, 5.10), (0.05, 0.95), (0.45, 0.55)),
    ((7.00, 3.00), (0.95, 0.05), (0.98, 0.02)),
    ((8.00, 2.00), (0.95, 0.05), (1.00, 0.00)),
])
def test_exploration_table_rows(scores, pe, pb):
    assert np.allclose(epsilon_greedy_probs(scores, 0.1), pe)
    assert np.round(boltzmann_policy(scores, 1.0), 2).tolist() == list(pb)


def test_exploration_table_inconsistent_row():
    # the published row (5.05, 4.95) -> (0.53, 0.48) sums to 1.01; the exact
    # softmax is (0.52498, 0.47502), one rounding unit from the first entry
    p = boltzmann_policy((5.05, 4.95), 1.0)
    assert np.allclose(epsilon_greedy_probs((5.05, 4.95), 0.1), (0.95, 0.05))
    assert abs(p[0] - 0.53) <= 0.01 and round(p[1], 2) == 0.48


def test_boltzmann_high_temperature_uniform():
    assert np.allclose(boltzmann_policy([1.0, 5.0, -3.0], 1e9), 1 / 3, atol=1e-6)


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=6), st.integers(0, 5),
       st.floats(0.01, 5.0), st.floats(0.01, 1.0))
def test_boltzmann_monotone(scores, i, tau, bump):
    i = i % len(scores)
    p = boltzmann_policy(scores, tau)
    raised = list(scores)
    raised[i] += bump
    q = boltzmann_policy(raised, tau)
    assert q[i] >= p[i]
    assert abs(p.sum() - 1) < 1e-12


def test_epsilon_greedy_limits():
    rng = make_stream(0, 0, "eg")
    assert all(epsilon_greedy([0.1, 0.9, 0.3], 0.0, rng) == 1 for _ in range(100))
    counts = np.bincount([epsilon_greedy([0.1, 0.9, 0.3], 1.0, rng) for _ in range(30000)],
                         minlength=3)
    assert np.all(np.abs(counts / 30000 - 1 / 3) < 0.02)


def test_epsilon_z_greedy_repeat():
    rng = make_stream(0, 0, "ez")
    a, st_ = epsilon_z_greedy([0.0, 9.0], 0.5, [1.0], (3, 0), rng)
    assert a == 0 and st_ == (2, 0)


def test_epsilon_z_greedy_no_exploration():
    rng = make_stream(0, 0, "ez")
    for _ in range(100):
        a, st_ = epsilon_z_greedy([0.0, 9.0], 0.0, [0.0, 1.0], (0, None), rng)
        assert a == 1 and st_[0] == 0


def test_epsilon_z_point_mass_matches_epsilon_greedy():
    rng = make_stream(1, 0, "ez")
    state = (0, None)
    acts = []
    for _ in range(40000):
        a, state = epsilon_z_greedy([0.0, 1.0, 0.5], 0.3, [1.0], state, rng)
        acts.append(a)
    freq = np.bincount(acts, minlength=3) / len(acts)
    assert np.allclose(freq, epsilon_greedy_probs([0.0, 1.0, 0.5], 0.3), atol=0.01)


def test_ucb_examples():
    assert ucb_action([1, 100], [0.5, 0.5], 1.0) == 0
    assert ucb_action([100, 1], [0.5, 0.4], 1.0) == 1
    assert ucb_action([5, 7], [0.2, 0.7], 0.0) == 1
    assert ucb_action([3, 0], [0.9, 0.0]) == 1


def test_thompson_point_masses():
    rng = make_stream(0, 0, "ts")
    b = BetaBelief(np.array([1e9, 1.0]), np.array([1.0, 1e9]))
    assert all(thompson_action(b, rng) == 0 for _ in range(100))


def test_thompson_symmetry():
    rng = make_stream(0, 0, "ts")
    picks = [thompson_action(BetaBelief.uniform(2), rng) for _ in range(10_000)]
    assert abs(np.mean(picks) - 0.5) < 0.02


def test_thompson_concentrated():
    rng = make_stream(0, 0, "ts")
    b = BetaBelief(np.array([100.0, 1.0]), np.array([1.0, 100.0]))
    picks = [thompson_action(b, rng) for _ in range(2000)]
    assert np.mean(np.array(picks) == 0) >= 0.99


def test_regret_accounting():
    led = RegretLedger()
    for _ in range(50):
        regret_step(led, [0.5, 0.6], 1)
    assert led.total == 0.0
    led = RegretLedger()
    for _ in range(50):
        regret_step(led, [0.5, 0.6], 0)
    assert led.total == pytest.approx(0.1 * 50)


def test_thompson_sublinear_regret():
    means = np.array([0.5, 0.6])
    T = 5000
    L = np.zeros(2)
    for i in range(20):
        arms, _ = bandit_simulate("thompson", means, 2 * T, 1, run_id=i)
        cum = np.cumsum(means.max() - means[arms])
        L += cum[T - 1], cum[2 * T - 1]
    assert L[1] / L[0] < 1.9
