import json
import shutil
import subprocess
import sys

import pytest

from rlworkbench.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def test_solve_stdout(capsys):
    assert run("solve") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["Q"][3] == pytest.approx([0.81, 1.0])
    assert out["policy"][1:4] == [1, 1, 1]


def test_solve_policy_iteration_to_file(tmp_path):
    assert run("solve", "--algo", "pi", "--out", tmp_path) == 0
    out = json.loads((tmp_path / "solve.json").read_text())
    assert out["V"][1] == pytest.approx(0.81)


def test_train_writes_csv_and_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"algo": "sarsa", "n_seeds": 5, "steps": 400, "eval_every": 100}))
    out = tmp_path / "o"
    assert run("train", "--config", cfg, "--algo", "q_learning", "--seeds", 2, "--workers", 1,
               "--out", out) == 0
    saved = json.loads((out / "config.json").read_text())
    assert saved["algo"] == "q_learning" and saved["n_seeds"] == 2 and saved["steps"] == 400
    lines = (out / "train.csv").read_text().splitlines()
    assert lines[0] == "run_id,seed,step,episode,metric,value"
    assert {line.split(",")[0] for line in lines[1:]} == {"0", "1"}


def test_train_is_deterministic(capsys):
    args = ("train", "--seeds", 2, "--steps", 500, "--eval-every", 250, "--workers", 1)
    run(*args)
    a = capsys.readouterr().out
    run(*args)
    assert capsys.readouterr().out == a


def test_bandit_and_report_pipeline(tmp_path):
    for algo in ("thompson", "epsilon_greedy"):
        assert run("bandit", "--algo", algo, "--seeds", 4, "--steps", 300,
                   "--out", tmp_path / "b") == 0
    assert len(list((tmp_path / "b").glob("*.csv"))) == 8
    assert run("report", tmp_path / "b", "--out", tmp_path / "r") == 0
    table = (tmp_path / "r" / "report.csv").read_text().splitlines()
    labels = {line.split(",")[0] for line in table[1:]}
    assert labels == {"bandit_thompson", "bandit_epsilon_greedy"}
    assert (tmp_path / "r" / "plot_bandit_thompson_cum_regret.csv").exists()


def test_report_labels(tmp_path, capsys):
    run("train", "--seeds", 1, "--steps", 200, "--eval-every", 100, "--out", tmp_path / "t")
    assert run("report", f"mine={tmp_path / 't' / 'train.csv'}", "--out", tmp_path / "r") == 0
    assert capsys.readouterr().out.strip().endswith("report.csv")
    assert (tmp_path / "r" / "report.csv").read_text().splitlines()[1].startswith("mine,")


@pytest.mark.parametrize("algo", ["mpc", "mcts"])
def test_plan_reaches_goal(algo, capsys):
    assert run("plan", "--algo", algo) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["done"] and out["states"] == [1, 2, 3, 4]


def test_plan_writes_traces(tmp_path):
    assert run("plan", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "plan_trace.json").read_text())[0]["state"] == 1


def test_selftest_subset(capsys):
    assert run("selftest", "--only", "1,4") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("PASS  1") and out[1].startswith("PASS  4")
    assert out[-1] == "2/2 criteria passed"


@pytest.mark.parametrize("argv", [
    ("solve", "--algo", "rtdp"),
    ("train", "--algo", "td3"),
    ("train", "--seeds", 0),
    ("bandit", "--algo", "exp3"),
    ("plan", "--algo", "dreamer"),
    ("selftest", "--only", "x"),
    ("selftest", "--only", "99"),
])
def test_errors_exit_nonzero(argv):
    with pytest.raises(SystemExit) as exc:
        run(*argv)
    assert exc.value.code not in (0, None)


def test_missing_config_and_bad_report_input(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("train", "--config", tmp_path / "nope.json")
    assert "cannot read config" in str(exc.value.code)
    bad = tmp_path / "bad.csv"
    bad.write_text("foo,bar\n1,2\n")
    with pytest.raises(SystemExit) as exc:
        run("report", bad, "--out", tmp_path / "r")
    assert "bad.csv:1" in str(exc.value.code)


def test_usage_error_code():
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == 2


def test_module_entry_point():
    exe = shutil.which("rlwb")
    cmd = [exe] if exe else [sys.executable, "-m", "rlworkbench.cli"]
    proc = subprocess.run(cmd + ["solve"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["algo"] == "vi"
    proc = subprocess.run(cmd + ["train", "--algo", "nope"], capture_output=True, text=True,
                          timeout=120)
    assert proc.returncode == 1 and "unknown algo" in proc.stderr
