"""Command-line entry point ``rlwb``.

Subcommands: ``solve``, ``train``, ``bandit``, ``plan``, ``report`` and
``selftest``. Flags given on the command line override values from
``--config``.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import harness

BANDIT_ALGOS = ("thompson", "ucb", "epsilon_greedy")
PLANNERS = ("mpc", "mcts")


def _common(p, algo_help="algorithm id"):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--seeds", type=int, help="number of independent runs")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--algo", help=algo_help)
    p.add_argument("--env", help="environment id")
    p.add_argument("--steps", type=int, help="total steps per run")
    p.add_argument("--workers", type=int, help="parallel workers (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rlwb", description="Reinforcement-learning workbench")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="dynamic programming on a tabular env")
    _common(p, "vi | pi")
    p.add_argument("--gamma", type=float, default=0.9)
    p = sub.add_parser("train", help="train an RL algorithm over seeds")
    _common(p, "|".join(harness.ALGOS))
    p.add_argument("--eval-every", type=int)
    p = sub.add_parser("bandit", help="Bernoulli bandit runs")
    _common(p, "|".join(BANDIT_ALGOS))
    p.add_argument("--means", default="0.5,0.6", help="comma-separated arm means")
    p.add_argument("--param", type=float, help="epsilon or UCB c")
    p = sub.add_parser("plan", help="closed-loop planning on a tabular env")
    _common(p, "|".join(PLANNERS))
    p.add_argument("--horizon", type=int, default=3)
    p = sub.add_parser("report", help="aggregate CSVs into IQM tables")
    p.add_argument("inputs", nargs="+",
                   help="CSV files or directories, optionally LABEL=PATH")
    p.add_argument("--out", type=Path, required=True)
    p = sub.add_parser("selftest", help="run acceptance criteria 1-13")
    p.add_argument("--only", help="comma-separated criterion numbers")
    return ap


def _load_config(args) -> dict:
    if getattr(args, "config", None) is None:
        return {}
    try:
        d = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"rlwb: cannot read config {args.config}: {exc}")
    if not isinstance(d, dict):
        raise SystemExit("rlwb: config must be a JSON object")
    return d


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise SystemExit(f"rlwb: cannot write {path}: {exc}")


def cmd_solve(args) -> int:
    from .dp import policy_iteration, q_from_v, value_iteration

    d = _load_config(args)
    env = args.env or d.get("env", "gridworld_1d")
    algo = args.algo or d.get("algo", "vi")
    mdp = harness.make_env(env, **d.get("env_params", {}))
    if algo == "vi":
        V, Q, pol = value_iteration(mdp, args.gamma)
    elif algo == "pi":
        V, pol = policy_iteration(mdp, args.gamma)
        Q = q_from_v(V, mdp, args.gamma)
    else:
        raise SystemExit(f"rlwb: unknown solver {algo!r}; choose vi or pi")
    out = {"env": env, "algo": algo, "gamma": args.gamma, "V": V.tolist(), "Q": Q.tolist(),
           "policy": np.argmax(pol, axis=1).tolist()}
    text = json.dumps(out, indent=1) + "\n"
    if args.out:
        _write(args.out / "solve.json", text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    d = _load_config(args)
    try:
        cfg = harness.ExperimentConfig.from_dict(
            d, algo=args.algo, env=args.env, n_seeds=args.seeds, steps=args.steps,
            seed=args.seed, workers=args.workers, eval_every=args.eval_every,
            out=str(args.out) if args.out else None)
        records = harness.run_experiment(cfg)
    except (ValueError, OSError) as exc:
        raise SystemExit(f"rlwb: {exc}")
    if not cfg.out:
        sys.stdout.write(harness.records_to_csv(records))
    return 0


def cmd_bandit(args) -> int:
    from ._kernels import bandit_simulate

    d = _load_config(args)
    algo = args.algo or d.get("algo", "thompson")
    if algo not in BANDIT_ALGOS:
        raise SystemExit(f"rlwb: unknown bandit algo {algo!r}; choose from "
                         + ", ".join(BANDIT_ALGOS))
    means = np.array([float(x) for x in str(d.get("means", args.means)).split(",")])
    T = args.steps or d.get("steps", 10_000)
    n = args.seeds or d.get("n_seeds", 1)
    seed = args.seed if args.seed is not None else d.get("seed", 0)
    param = args.param if args.param is not None else d.get(
        "param", {"thompson": 0.0, "ucb": 1.0, "epsilon_greedy": 0.1}[algo])
    out = args.out or (Path(d["out"]) if "out" in d else None)
    for run_id in range(n):
        arms, rewards = bandit_simulate(algo, means, T, seed, param, run_id=run_id)
        text = harness.bandit_run_csv(arms, rewards, means)
        if out:
            _write(out / f"bandit_{algo}_{run_id}.csv", text)
        else:
            sys.stdout.write(text)
    return 0


def cmd_plan(args) -> int:
    from .envs import TabularEnv
    from .planner import (PlanProblem, enumerate_sequences, mcts_search, mpc_controller,
                          random_shooting, tabular_model, traces_to_json)
    from .rng import make_stream

    d = _load_config(args)
    env_id = args.env or d.get("env", "gridworld_1d")
    algo = args.algo or d.get("algo", "mpc")
    seed = args.seed if args.seed is not None else d.get("seed", 0)
    mdp = harness.make_env(env_id, **d.get("env_params", {}))
    prob = PlanProblem(tabular_model(mdp), horizon=args.horizon, gamma=0.9,
                       n_actions=mdp.n_actions)
    rng = make_stream(seed, 0, "plan")
    if algo == "mpc":
        seqs = enumerate_sequences(prob)

        def planner(s):
            return random_shooting(prob, s, candidates=seqs)
    elif algo == "mcts":
        def planner(s):
            return mcts_search(prob, s, lambda _: np.ones(mdp.n_actions), n_sim=100, rng=rng)
    else:
        raise SystemExit(f"rlwb: unknown planner {algo!r}; choose mpc or mcts")
    env = TabularEnv(mdp, rng)
    res = mpc_controller(env, planner, max_steps=args.steps or 50)
    summary = {k: res[k] for k in ("states", "actions", "rewards", "done")}
    if args.out:
        _write(args.out / "plan_trace.json", traces_to_json(res["records"]))
        _write(args.out / "plan.json", json.dumps(summary, indent=1) + "\n")
    else:
        sys.stdout.write(json.dumps(summary) + "\n")
    return 0


def _collect_inputs(items) -> dict:
    inputs = {}
    for item in items:
        label, _, path = item.rpartition("=")
        path = Path(path)
        files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
        if not files:
            raise SystemExit(f"rlwb: no CSV files under {path}")
        for f in files:
            # per-run files named <label>_<run>.csv pool under <label>
            m = re.fullmatch(r"(.+)_\d+", f.stem)
            lab = label or (m.group(1) if m else path.name if path.is_dir() else f.stem)
            try:
                text = f.read_text()
            except OSError as exc:
                raise SystemExit(f"rlwb: cannot read {f}: {exc}")
            try:
                # validate here so diagnostics name the file, not the label
                harness.read_rows(text, str(f))
            except ValueError as exc:
                raise SystemExit(f"rlwb: {exc}")
            inputs.setdefault(lab, []).append(text)
    return inputs


def cmd_report(args) -> int:
    try:
        path = harness.write_report(_collect_inputs(args.inputs), args.out)
    except ValueError as exc:
        raise SystemExit(f"rlwb: {exc}")
    print(path)
    return 0


def cmd_selftest(args) -> int:
    from .acceptance import selftest

    only = None
    if args.only:
        try:
            only = [int(x) for x in args.only.split(",") if x.strip()]
        except ValueError:
            raise SystemExit("rlwb: --only takes comma-separated integers")
    try:
        return selftest(only)
    except ValueError as exc:
        raise SystemExit(f"rlwb: {exc}")


COMMANDS = {"solve": cmd_solve, "train": cmd_train, "bandit": cmd_bandit, "plan": cmd_plan,
            "report": cmd_report, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
