import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlworkbench.harness import (ExperimentConfig, RunRecord, aggregate, bandit_run_csv,
                                 bootstrap_ci, iqm, make_env, read_rows, records_to_csv, report,
                                 run_experiment, run_seed, write_report)
from rlworkbench.rng import make_stream

samples = st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=4, max_size=60)


# --- IQM ------------------------------------------------------------------------

def test_iqm_one_to_hundred():
    assert iqm(np.arange(1, 101)) == 50.5


def test_iqm_constant_and_too_few():
    assert iqm([3.25] * 9) == 3.25
    with pytest.raises(ValueError):
        iqm([1.0, 2.0, 3.0])


def test_iqm_trims_one_outlier():
    x = np.arange(20.0)
    y = x.copy()
    y[-1] = 1e9
    assert iqm(x) == iqm(y)


@settings(max_examples=100, deadline=None)
@given(x=samples)
def test_iqm_bounded(x):
    v = iqm(x)
    assert min(x) - 1e-9 <= v <= max(x) + 1e-9


@settings(max_examples=100, deadline=None)
@given(x=samples, seed=st.integers(0, 1000))
def test_iqm_permutation_invariant(x, seed):
    perm = np.random.default_rng(seed).permutation(len(x))
    assert iqm(np.asarray(x)[perm]) == iqm(x)


@settings(max_examples=100, deadline=None)
@given(x=samples, shift=st.floats(0.0, 1e6))
def test_iqm_ignores_values_outside_band(x, shift):
    s = np.sort(np.asarray(x))
    n = s.size
    lo, hi = n // 4, -(-3 * n // 4)
    y = s.copy()
    y[:lo] -= shift
    y[hi:] += shift
    assert iqm(y) == iqm(s)


# --- bootstrap --------------------------------------------------------------------

def test_bootstrap_constant_zero_width():
    lo, hi = bootstrap_ci([2.0] * 10)
    assert lo == hi == 2.0


@settings(max_examples=40, deadline=None)
@given(x=samples, seed=st.integers(0, 1000))
def test_bootstrap_contains_point(x, seed):
    lo, hi = bootstrap_ci(x, 500, rng=make_stream(seed, 0, "boot"))
    assert lo - 1e-9 <= iqm(x) <= hi + 1e-9


def test_bootstrap_width_shrinks_like_root_n():
    def mean_width(n):
        ws = []
        for rep in range(40):
            x = make_stream(rep, n, "gauss").normal(size=n)
            lo, hi = bootstrap_ci(x, 1000, rng=make_stream(rep, n, "boot"))
            ws.append(hi - lo)
        return np.mean(ws)

    ratio = mean_width(50) / mean_width(200)
    assert abs(ratio - 2.0) <= 0.25 * 2.0


def test_bootstrap_errors():
    with pytest.raises(ValueError):
        bootstrap_ci([])
    with pytest.raises(ValueError):
        bootstrap_ci([1.0], level=1.0)


def test_aggregate_small_samples_use_mean_and_range():
    assert aggregate([1.0, 3.0]) == (2.0, 1.0, 3.0)
    assert aggregate([5.0]) == (5.0, 5.0, 5.0)


# --- config -----------------------------------------------------------------------

@pytest.mark.parametrize("bad", [{"n_seeds": 0}, {"steps": -1}, {"algo": "td3"},
                                 {"env": "atari"}, {"gamma": 1.0}, {"schema": "v0"},
                                 {"n_seeds": True}, {"params": []}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_config_rejects_unknown_keys_and_roundtrips():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"algo": "sarsa", "lr": 0.1})
    cfg = ExperimentConfig.from_dict({"algo": "sarsa"}, steps=500, n_seeds=None)
    assert cfg.steps == 500 and cfg.n_seeds == 10
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_json("[1, 2]")


def test_run_record_monotone():
    rec = RunRecord(0, 1)
    rec.append(5, 0, "m", 1.0)
    with pytest.raises(ValueError):
        rec.append(4, 0, "m", 1.0)


def test_make_env_ids():
    assert make_env("gridworld_1d").n_states == 5
    assert make_env("random_mdp", n_s=4).n_states == 4
    two = make_env("two_goal_grid", w=(0.0, 1.0))
    assert two.reward[0, 0, 24] == 1.0
    with pytest.raises(ValueError):
        make_env("mountain_car")


def test_run_seeds_distinct():
    seeds = {run_seed(0, i) for i in range(100)}
    assert len(seeds) == 100
    assert run_seed(1, 0) != run_seed(0, 0)


# --- runs -------------------------------------------------------------------------

def small_cfg(**kw):
    d = dict(algo="q_learning", env="gridworld_1d", n_seeds=3, steps=3000, eval_every=1000,
             seed=11, workers=1)
    d.update(kw)
    return ExperimentConfig(**d)


def test_csv_bytes_identical_across_reruns_and_workers(tmp_path):
    cfg = small_cfg()
    a = records_to_csv(run_experiment(cfg, workers=1))
    b = records_to_csv(run_experiment(cfg, workers=1))
    c = records_to_csv(run_experiment(cfg, workers=3))
    assert a == b == c
    lines = a.splitlines()
    assert lines[0] == "run_id,seed,step,episode,metric,value"
    assert a.endswith("\n")


def test_run_writes_outputs(tmp_path):
    cfg = small_cfg(out=str(tmp_path / "run"))
    recs = run_experiment(cfg)
    assert (tmp_path / "run" / "train.csv").read_text() == records_to_csv(recs)
    assert json.loads((tmp_path / "run" / "config.json").read_text())["seed"] == 11


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        run_experiment(small_cfg(n_seeds=1, out=str(blocker / "sub")))


def test_q_learning_reaches_q_star_on_all_seeds():
    recs = run_experiment(ExperimentConfig(n_seeds=10, workers=1))
    for rec in recs:
        err = [v for _, _, m, v in rec.rows if m == "q_error"][-1]
        assert err < 1e-2


@pytest.mark.parametrize("algo", ["sarsa", "a2c", "ppo", "dqn"])
def test_other_algos_run(algo):
    recs = run_experiment(small_cfg(algo=algo, n_seeds=1, steps=1000, eval_every=500))
    steps = [r[0] for r in recs[0].rows]
    assert steps == sorted(steps)
    assert steps and steps[-1] == 1000


# --- report -----------------------------------------------------------------------

def test_single_run_report_is_its_own_metrics():
    recs = run_experiment(small_cfg(n_seeds=1))
    table, _ = report({"q": [records_to_csv(recs)]})
    rows = table.splitlines()[1:]
    own = {(m, s): v for s, _, m, v in recs[0].rows}
    assert len(rows) == len(own)
    for line in rows:
        _, metric, step, n, point, lo, hi = line.split(",")
        assert n == "1" and float(point) == float(lo) == float(hi) == own[(metric, int(step))]


def test_report_invariant_to_row_order():
    text = records_to_csv(run_experiment(small_cfg(n_seeds=5)))
    head, *body = text.splitlines(keepends=True)
    shuffled = head + "".join(np.random.default_rng(0).permutation(body))
    assert report({"q": [text]}) == report({"q": [shuffled]})


def test_end_to_end_report_bytes_stable(tmp_path):
    outs = []
    for i, w in enumerate((1, 2)):
        recs = run_experiment(small_cfg(n_seeds=4), workers=w)
        path = write_report({"q": [records_to_csv(recs)]}, tmp_path / str(i))
        outs.append(sorted((p.name, p.read_bytes()) for p in path.parent.iterdir()))
    assert outs[0] == outs[1]


def test_bandit_csv_and_regret_report():
    text = bandit_run_csv([0, 1, 0], [1.0, 0.0, 1.0], [0.5, 0.6])
    assert text.splitlines() == ["step,arm,reward,per_step_regret,cum_regret",
                                 "1,0,1.0,0.09999999999999998,0.09999999999999998",
                                 "2,1,0.0,0.0,0.09999999999999998",
                                 "3,0,1.0,0.09999999999999998,0.19999999999999996"]
    table, plots = report({"b": [text]})
    assert "plot_b_cum_regret.csv" in plots


def test_thompson_regret_below_epsilon_greedy_in_report():
    from rlworkbench._kernels import bandit_simulate

    means = np.array([0.5, 0.6])
    inputs = {}
    for algo, param in (("thompson", 0.0), ("epsilon_greedy", 0.1)):
        inputs[algo] = [bandit_run_csv(*bandit_simulate(algo, means, 2000, 0, param, run_id=r),
                                       means) for r in range(8)]
    _, plots = report(inputs, n_resamples=200)
    last = {k: float(v.splitlines()[-1].split(",")[1]) for k, v in plots.items()
            if k.endswith("cum_regret.csv")}
    assert last["plot_thompson_cum_regret.csv"] < last["plot_epsilon_greedy_cum_regret.csv"]


@pytest.mark.parametrize("text,where", [
    ("a,b\n1,2\n", ":1:"),
    ("run_id,seed,step,episode,metric,value\n0,1,2,0,m\n", ":2:"),
    ("run_id,seed,step,episode,metric,value\n0,1,x,0,m,1.0\n", ":2:"),
    ("", "empty"),
])
def test_schema_violations_name_the_line(text, where):
    with pytest.raises(ValueError, match=where):
        read_rows(text, "f.csv")
