"""Experiment orchestration: configs, seeded runs, robust aggregation and reports.

Train CSV rows are ``run_id,seed,step,episode,metric,value``. Numbers are
written with ``repr`` so files are byte-stable across runs and platforms
with IEEE doubles.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .rng import make_stream

__all__ = [
    "SCHEMA",
    "TRAIN_HEADER",
    "BANDIT_HEADER",
    "ALGOS",
    "ENVS",
    "ExperimentConfig",
    "RunRecord",
    "make_env",
    "run_seed",
    "run_one",
    "run_experiment",
    "records_to_csv",
    "bandit_run_csv",
    "iqm",
    "bootstrap_ci",
    "aggregate",
    "read_rows",
    "report",
    "write_report",
]

SCHEMA = "rlworkbench.experiment/1"
TRAIN_HEADER = ("run_id", "seed", "step", "episode", "metric", "value")
BANDIT_HEADER = ("step", "arm", "reward", "per_step_regret", "cum_regret")
ALGOS = ("q_learning", "sarsa", "dqn", "a2c", "ppo")
ENVS = ("gridworld_1d", "random_mdp", "two_goal_grid")


# -------------------------------------------------------------------- config
@dataclass
class ExperimentConfig:
    """Versioned experiment description. Unknown keys are rejected."""

    algo: str = "q_learning"
    env: str = "gridworld_1d"
    params: dict = field(default_factory=dict)
    env_params: dict = field(default_factory=dict)
    n_seeds: int = 10
    steps: int = 20_000
    eval_every: int = 2_000
    gamma: float = 0.9
    seed: int = 0
    out: str | None = None
    workers: int | None = None
    schema: str = SCHEMA

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.schema != SCHEMA:
            raise ValueError(f"unsupported schema {self.schema!r}, expected {SCHEMA!r}")
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}; choose from {', '.join(ALGOS)}")
        if self.env not in ENVS:
            raise ValueError(f"unknown env {self.env!r}; choose from {', '.join(ENVS)}")
        for name in ("n_seeds", "steps", "eval_every", "workers"):
            v = getattr(self, name)
            if name == "workers" and v is None:
                continue
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not isinstance(self.params, dict) or not isinstance(self.env_params, dict):
            raise ValueError("params and env_params must be objects")

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        merged = dict(d)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**merged)

    @classmethod
    def from_json(cls, text: str, **overrides) -> "ExperimentConfig":
        d = json.loads(text)
        if not isinstance(d, dict):
            raise ValueError("config must be a JSON object")
        return cls.from_dict(d, **overrides)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


@dataclass
class RunRecord:
    """Metrics of one run as ``(step, episode, metric, value)`` rows in step order."""

    run_id: int
    seed: int
    rows: list = field(default_factory=list)
    wall_clock: float = 0.0

    def append(self, step: int, episode: int, metric: str, value: float) -> None:
        if self.rows and step < self.rows[-1][0]:
            raise ValueError("step index must be monotone")
        self.rows.append((int(step), int(episode), str(metric), float(value)))


# ---------------------------------------------------------------------- runs
def make_env(env: str, **params):
    """Tabular environment by id. ``two_goal_grid`` pays ``phi(s') . w`` (``w`` defaults to (1, 0))."""
    from .envs import TabularMDP, make_gridworld_1d, make_random_mdp, make_two_goal_grid

    if env == "gridworld_1d":
        return make_gridworld_1d(**params)
    if env == "random_mdp":
        p = {"n_s": 10, "n_a": 3, "seed": 0, "n_terminal": 1}
        p.update(params)
        return make_random_mdp(**p)
    if env == "two_goal_grid":
        p = dict(params)
        w = np.asarray(p.pop("w", (1.0, 0.0)), dtype=float)
        mdp, phi = make_two_goal_grid(**p)
        R = np.broadcast_to((phi @ w)[None, None, :], mdp.trans.shape)
        return TabularMDP(mdp.trans, np.array(R), mdp.terminal, mdp.init_dist,
                          action_names=mdp.action_names)
    raise ValueError(f"unknown env {env!r}")


def run_seed(seed: int, run_id: int) -> int:
    """31-bit integer seed for run ``run_id`` of an experiment with master ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(run_id)])
    return int(ss.generate_state(1, dtype=np.uint32)[0] >> 1)


def run_one(cfg: ExperimentConfig, run_id: int) -> RunRecord:
    """Execute run ``run_id`` of ``cfg``. Deterministic in (cfg, run_id)."""
    from .dp import value_iteration

    t0 = time.perf_counter()
    mdp = make_env(cfg.env, **cfg.env_params)
    seed = run_seed(cfg.seed, run_id)
    rec = RunRecord(run_id, seed)
    p = dict(cfg.params)
    checkpoints = list(range(cfg.eval_every, cfg.steps + 1, cfg.eval_every))
    if not checkpoints or checkpoints[-1] != cfg.steps:
        checkpoints.append(cfg.steps)
    if cfg.algo in ("q_learning", "sarsa"):
        from .td import tabular_control

        _, Q_star, _ = value_iteration(mdp, cfg.gamma)
        # epsilon=0.1 leaves the walled action under-visited within 2e4 steps
        p.setdefault("epsilon", 0.3)
        p.setdefault("lr_power", 0.6)
        last = None
        for c in checkpoints:
            # same stream with a longer budget, so each shorter run is a prefix of the next
            res = tabular_control(mdp, cfg.algo, c, cfg.gamma, seed, **p)
            last = res
            n_ep = int(len(res.episode_ends))
            rec.append(c, n_ep, "q_error", float(np.max(np.abs(res.Q - Q_star))))
        prev = 0
        rows = []
        for c in checkpoints:
            m = (last.episode_ends > prev) & (last.episode_ends <= c)
            if np.any(m):
                rows.append((c, int(np.sum(last.episode_ends <= c)), "return",
                             float(np.mean(last.episode_returns[m]))))
            prev = c
        merged = sorted(rec.rows + rows, key=lambda r: (r[0], r[2]))
        rec.rows = merged
    elif cfg.algo in ("a2c", "ppo"):
        from .policy import ACConfig, train_a2c, train_ppo

        eta = p.pop("eta", 0.05)
        ac = ACConfig(gamma=cfg.gamma, **p) if p else ACConfig(gamma=cfg.gamma,
                                                                normalize_adv=cfg.algo == "ppo")
        fn = train_a2c if cfg.algo == "a2c" else train_ppo
        _, _, rows = fn(mdp, ac, steps=cfg.steps, seed=seed, eta=eta, eval_every=1)
        marks = iter(checkpoints)
        nxt = next(marks)
        for i, row in enumerate(rows):
            if row["step"] >= nxt:
                for k in ("mean_return", "policy_loss", "value_loss", "entropy"):
                    rec.append(nxt, row["update"], k, row[k])
                nxt = next(marks, None)
                if nxt is None:
                    break
    elif cfg.algo == "dqn":
        from .deep_value import train_dqn

        p.setdefault("eval_every", cfg.eval_every)
        _, rows = train_dqn(mdp, cfg.steps, seed=seed, gamma=cfg.gamma, **p)
        for row in rows:
            if not math.isnan(row["return_on_eval"]):
                rec.append(row["step"], 0, "return_on_eval", row["return_on_eval"])
                rec.append(row["step"], 0, "loss", row["loss"])
    rec.wall_clock = time.perf_counter() - t0
    return rec


def _run_star(args):
    return run_one(*args)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list:
    """Run ``cfg.n_seeds`` independent runs, in parallel when ``workers > 1``.

    Results are returned in run-id order whatever the completion order, so
    outputs do not depend on scheduling. Writes ``train.csv`` under
    ``cfg.out`` when it is set.
    """
    cfg.validate()
    workers = workers or cfg.workers or default_workers()
    jobs = [(cfg, i) for i in range(cfg.n_seeds)]
    if workers > 1 and cfg.n_seeds > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.n_seeds)) as ex:
            records = list(ex.map(_run_star, jobs))
    else:
        records = [run_one(*j) for j in jobs]
    records.sort(key=lambda r: r.run_id)
    if cfg.out:
        out = Path(cfg.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "train.csv").write_text(records_to_csv(records))
            (out / "config.json").write_text(cfg.to_json())
        except OSError as exc:
            raise OSError(f"cannot write to output path {out}: {exc}") from exc
    return records


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def records_to_csv(records: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAIN_HEADER)
    for rec in records:
        for step, ep, metric, value in rec.rows:
            w.writerow([rec.run_id, rec.seed, step, ep, metric, _num(value)])
    return buf.getvalue()


def bandit_run_csv(arms, rewards, means) -> str:
    """Per-pull rows ``step,arm,reward,per_step_regret,cum_regret`` (steps from 1)."""
    means = np.asarray(means, dtype=float)
    arms = np.asarray(arms, dtype=int)
    per = means.max() - means[arms]
    cum = np.cumsum(per)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BANDIT_HEADER)
    for t in range(arms.size):
        w.writerow([t + 1, int(arms[t]), _num(float(rewards[t])), _num(per[t]), _num(cum[t])])
    return buf.getvalue()


# ---------------------------------------------------------------- statistics
def iqm(samples) -> float:
    """Interquartile mean.

    Sort ascending and average the entries with indices in
    ``[floor(0.25 n), ceil(0.75 n))``. Needs at least 4 samples.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 4:
        raise ValueError("IQM needs at least 4 samples")
    lo, hi = math.floor(0.25 * n), math.ceil(0.75 * n)
    return float(np.mean(x[lo:hi]))


def bootstrap_ci(samples, n_resamples: int = 1000, level: float = 0.95, rng=None) -> tuple:
    """Percentile bootstrap interval of the IQM.

    The samples are sorted first, so the interval does not depend on their
    order. Fewer than 4 samples fall back to the plain mean as statistic.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("bootstrap needs at least one sample")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    rng = rng if rng is not None else make_stream(0, 0, "bootstrap")
    idx = rng.integers(x.size, size=(n_resamples, x.size))
    res = np.sort(x[idx], axis=1)
    n = x.size
    if n >= 4:
        lo, hi = math.floor(0.25 * n), math.ceil(0.75 * n)
        stats = res[:, lo:hi].mean(axis=1)
    else:
        stats = res.mean(axis=1)
    a = (1.0 - level) / 2.0
    return float(np.quantile(stats, a)), float(np.quantile(stats, 1.0 - a))


def aggregate(values, key: str = "", n_resamples: int = 1000, level: float = 0.95) -> tuple:
    """(point, lo, hi) for one cell of a report.

    Four or more runs use the IQM with a bootstrap interval. Fewer runs use
    the mean with (min, max), so a single run reports its own value.
    """
    x = np.sort(np.asarray(values, dtype=float))
    if x.size >= 4:
        rng = make_stream(0, x.size, "report:" + key)
        lo, hi = bootstrap_ci(x, n_resamples, level, rng)
        return iqm(x), lo, hi
    return float(np.mean(x)), float(x.min()), float(x.max())


# -------------------------------------------------------------------- report
def read_rows(text: str, source: str = "<input>") -> tuple:
    """Parse a train or bandit CSV. Returns ``(kind, rows)``.

    Train rows become ``(run, step, metric, value)`` and bandit rows become
    the same with run ``source`` and metrics per_step_regret and cum_regret.
    Schema violations raise ``ValueError`` naming the line.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise ValueError(f"{source}: empty file") from None
    out = []
    if header == TRAIN_HEADER:
        kind = "train"
    elif header == BANDIT_HEADER:
        kind = "bandit"
    else:
        raise ValueError(f"{source}:1: unrecognized header {','.join(header)}")
    for ln, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise ValueError(f"{source}:{ln}: expected {len(header)} fields, got {len(row)}")
        try:
            if kind == "train":
                out.append((f"{source}#{int(row[0])}", int(row[2]), row[4], float(row[5])))
            else:
                step = int(row[0])
                out.append((source, step, "per_step_regret", float(row[3])))
                out.append((source, step, "cum_regret", float(row[4])))
        except ValueError as exc:
            raise ValueError(f"{source}:{ln}: {exc}") from None
    return kind, out


def report(inputs: dict, n_resamples: int = 1000, level: float = 0.95) -> tuple:
    """Aggregate runs per label, metric and step.

    Parameters
    ----------
    inputs : dict
        ``label -> list of CSV texts``. Runs from all texts of one label are
        pooled.

    Returns
    -------
    table : str
        CSV with columns label,metric,step,n,point,lo,hi.
    plots : dict
        ``filename -> CSV text`` with step,point,lo,hi per (label, metric).
    """
    cells = {}
    for label in sorted(inputs):
        for i, text in enumerate(inputs[label]):
            _, rows = read_rows(text, f"{label}[{i}]")
            for run, step, metric, value in rows:
                cells.setdefault((label, metric, step), []).append(value)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "metric", "step", "n", "point", "lo", "hi"])
    plots = {}
    for (label, metric, step) in sorted(cells):
        vals = cells[(label, metric, step)]
        pt, lo, hi = aggregate(vals, f"{label}/{metric}/{step}", n_resamples, level)
        w.writerow([label, metric, step, len(vals), _num(pt), _num(lo), _num(hi)])
        name = f"plot_{label}_{metric}.csv"
        plots.setdefault(name, ["step,point,lo,hi\n"]).append(
            f"{step},{_num(pt)},{_num(lo)},{_num(hi)}\n")
    return buf.getvalue(), {k: "".join(v) for k, v in sorted(plots.items())}


def write_report(inputs: dict, out_dir) -> Path:
    table, plots = report(inputs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(table)
    for name, text in plots.items():
        (out / name).write_text(text)
    return out / "report.csv"


def default_workers() -> int:
    return os.cpu_count() or 1
