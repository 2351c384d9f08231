"""Experiment runner: configs, simulation loop, CSV/JSON outputs and sweeps.

A config is a JSON object::

    {
      "algo": "vcee",
      "T": 5000,
      "seeds": [0, 1, 2],
      "params": {"psi": 1.0},
      "grid": {"c": [0.1, 0.3, 1.0]},
      "env": {"kind": "synth", "K": 6, "L": 2, "n_contexts": 20},
      "policy_class": {"kind": "tabular", "N": 100, "seed": 0, "anchor": "theta"},
      "checkpoints": [500, 5000],
      "out": "runs/vcee"
    }

Every (grid point, seed) pair is one run.  A run draws contexts from one rng
stream and the learner's randomness from another, both spawned from the seed,
so results do not depend on the order runs execute in.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import EpsilonGreedy, LinUCB, UniformRandom
from .core import (
    EnvironmentSpec,
    LinearGreedyPolicy,
    exact_policy_reward,
    expected_policy_reward,
    make_environment,
    make_tabular_class,
    realized_reward,
)
from .eels import EELS
from .exceptions import ConfigError
from .letor import build_replay_env, read_letor
from .oracle import ExactOracle, RegressionOracle
from .vcee import VCEE

__all__ = [
    "ALGORITHMS",
    "ExperimentConfig",
    "ExperimentResult",
    "load_config",
    "build_environment",
    "build_policy_class",
    "make_learner",
    "simulate",
    "run_experiment",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("vcee", "eels", "egreedy", "linucb", "uniform")
ROUND_COLUMNS = ("t", "reward", "cum_reward", "avg_reward", "explore_flag", "phase")


@dataclass
class ExperimentConfig:
    algo: str
    T: int
    seeds: list
    env: dict
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    policy_class: Optional[dict] = None
    oracle: Optional[str] = None
    checkpoints: list = field(default_factory=list)
    out: Optional[str] = None

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; choose from {ALGORITHMS}")
        if not isinstance(self.T, int) or isinstance(self.T, bool) or self.T < 1:
            raise ConfigError("T must be a positive integer")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if not isinstance(self.env, dict) or "K" not in self.env or "L" not in self.env:
            raise ConfigError("env needs at least K and L")
        for name, values in self.grid.items():
            if not isinstance(values, (list, tuple)) or not values:
                raise ConfigError(f"grid entry {name!r} must be a nonempty list")
        if self.oracle not in (None, "exact", "regression"):
            raise ConfigError("oracle must be 'exact' or 'regression'")
        self.seeds = [int(s) for s in self.seeds]
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(str(err)) from None

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def grid_points(self) -> list:
        """Cartesian product of the grid, each merged over ``params``."""
        if not self.grid:
            return [dict(self.params)]
        names = list(self.grid)
        return [
            {**self.params, **dict(zip(names, combo))}
            for combo in itertools.product(*(self.grid[n] for n in names))
        ]


def load_config(path) -> dict:
    """Read a JSON object; malformed files become :class:`ConfigError`."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def build_environment(env_cfg: dict):
    """Synthetic or replay environment from the ``env`` config block."""
    cfg = dict(env_cfg)
    kind = cfg.pop("kind", "synth")
    if kind == "synth":
        try:
            return make_environment(EnvironmentSpec(kind="synth", **cfg))
        except TypeError as err:
            raise ConfigError(f"bad env config: {err}") from None
    if kind == "letor":
        if "path" not in cfg:
            raise ConfigError("letor env needs a path")
        records = read_letor(cfg["path"])
        env, dropped = build_replay_env(
            records, int(cfg["K"]), int(cfg["L"]), cfg.get("weights"),
            max_relevance=cfg.get("max_relevance", 4),
            noise_halfwidth=cfg.get("noise_halfwidth", 0.0),
            shuffle=cfg.get("shuffle", False),
        )
        env.n_dropped = dropped
        return env
    raise ConfigError(f"unknown env kind {kind!r}")


def build_policy_class(pc_cfg: Optional[dict], env):
    """``None`` means the linear class (regression oracle)."""
    if pc_cfg is None:
        pc_cfg = {"kind": "tabular"} if env.contexts is not None else {"kind": "linear"}
    kind = pc_cfg.get("kind", "tabular")
    if kind == "linear":
        return None
    if kind != "tabular":
        raise ConfigError(f"unknown policy class kind {kind!r}")
    if env.contexts is None:
        raise ConfigError("tabular policies need an env with a finite context pool (n_contexts)")
    anchor = pc_cfg.get("anchor")
    if anchor == "theta":
        if not hasattr(env, "theta"):
            raise ConfigError("anchor 'theta' needs a synthetic env")
        anchor = env.theta
    elif anchor is not None:
        anchor = np.asarray(anchor, dtype=float)
    rng = np.random.default_rng(pc_cfg.get("seed", 0))
    return make_tabular_class(env, int(pc_cfg.get("N", 100)), rng, anchor=anchor,
                              spread=pc_cfg.get("spread", 2.0))


def _make_oracle(policy_class, kind, env):
    kind = kind or ("exact" if policy_class is not None else "regression")
    if kind == "exact":
        if policy_class is None:
            raise ConfigError("the exact oracle needs a tabular policy class")
        return ExactOracle(policy_class)
    return RegressionOracle(env.d)


def make_learner(algo: str, params: dict, env, oracle, T: int, n_policies: int):
    """Instantiate a learner and apply ``params`` via ``set_params``."""
    w = np.asarray(env.w, dtype=float)
    if algo == "vcee":
        learner = VCEE(oracle=oracle, w=w, horizon=T, n_policies=n_policies)
    elif algo == "egreedy":
        learner = EpsilonGreedy(oracle=oracle, w=w, horizon=T, n_policies=n_policies)
    elif algo == "eels":
        learner = EELS(oracle=oracle, horizon=T, L=env.L, n_policies=n_policies)
    elif algo == "linucb":
        if not np.allclose(w, 1.0):
            raise ConfigError("LinUCB only supports all-ones slot weights")
        learner = LinUCB(L=env.L, w=w)
    elif algo == "uniform":
        learner = UniformRandom(L=env.L)
    else:
        raise ConfigError(f"unknown algorithm {algo!r}")
    try:
        learner.set_params(**params)
    except ValueError as err:
        raise ConfigError(f"{algo}: {err}") from None
    return learner


def simulate(learner, env, T: int, env_rng, learner_rng):
    """Play ``T`` rounds; returns per-round rewards, explore flags and phases."""
    rewards = np.empty(T)
    explore = np.zeros(T, dtype=bool)
    phases = []
    for t in range(T):
        sample = env.draw(env_rng)
        ranking = learner.select(sample.context, learner_rng)
        phases.append(learner.phase)
        explore[t] = learner.last_explore
        r = realized_reward(ranking, sample.y, env.w, sample.noise)
        learner.observe(sample.y[list(ranking)], r)
        rewards[t] = r
    return rewards, explore, phases


def _write_rounds(path: Path, rewards, explore, phases):
    cum = np.cumsum(rewards)
    avg = cum / np.arange(1, rewards.shape[0] + 1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROUND_COLUMNS)
        for t in range(rewards.shape[0]):
            writer.writerow([t + 1, repr(float(rewards[t])), repr(float(cum[t])),
                             repr(float(avg[t])), int(explore[t]), phases[t]])
    return avg


def _check_writable(out: Path):
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        raise OSError(f"output directory {out} is not writable: {err}") from err


def _comparators(env, policy_class):
    """Best achievable reward and the best reward inside the class, if finite."""
    if env.contexts is not None:
        oracle_reward = env.best_reward()
    else:
        # the true scorer ranks optimally under a monotone link
        rng = np.random.default_rng(12345)
        oracle_reward = expected_policy_reward(
            LinearGreedyPolicy(env.theta, np.maximum(env.w, 0)), env, env.w, 20000, rng)
    best_in_class = None
    if policy_class is not None:
        best_in_class = max(exact_policy_reward(p, env) for p in policy_class)
    return float(oracle_reward), best_in_class


@dataclass
class ExperimentResult:
    summary: dict
    curves: dict  # grid index -> (n_seeds, T) average-reward curves
    points: list


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def run_experiment(cfg, out=None) -> ExperimentResult:
    """Run every grid point for every seed and write the outputs.

    A single run writes ``rounds.csv`` straight into the output directory;
    otherwise each run gets ``param_XX/seed_S/rounds.csv``.  ``summary.json``
    always lands in the output directory.
    """
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    out = out if out is not None else cfg.out
    if out is None:
        raise ConfigError("no output directory given")
    out = Path(out)

    points = cfg.grid_points()
    probe_env = build_environment(cfg.env)
    policy_class = build_policy_class(cfg.policy_class, probe_env)
    n_policies = len(policy_class) if policy_class is not None else int(
        (cfg.policy_class or {}).get("N", 1000))
    # fail on bad hyperparameters before touching the disk
    for p in points:
        make_learner(cfg.algo, p, probe_env, _make_oracle(policy_class, cfg.oracle, probe_env),
                     cfg.T, n_policies)
    _check_writable(out)

    oracle_reward, best_in_class = _comparators(probe_env, policy_class)
    comparator = best_in_class if best_in_class is not None else oracle_reward
    single = len(points) == 1 and len(cfg.seeds) == 1
    started = time.perf_counter()
    runs, curves = [], {}
    for i, params in enumerate(points):
        curves[i] = np.empty((len(cfg.seeds), cfg.T))
        for j, seed in enumerate(cfg.seeds):
            env = build_environment(cfg.env) if cfg.env.get("kind") == "letor" else probe_env
            oracle = _make_oracle(policy_class, cfg.oracle, env)
            learner = make_learner(cfg.algo, params, env, oracle, cfg.T, n_policies)
            env_ss, learner_ss = np.random.SeedSequence(seed).spawn(2)
            t0 = time.perf_counter()
            rewards, explore, phases = simulate(
                learner, env, cfg.T, np.random.default_rng(env_ss), np.random.default_rng(learner_ss))
            wall = time.perf_counter() - t0
            run_dir = out if single else out / f"param_{i:02d}" / f"seed_{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            avg = _write_rounds(run_dir / "rounds.csv", rewards, explore, phases)
            curves[i][j] = avg
            record = {
                "params": params,
                "seed": seed,
                "dir": str(run_dir.relative_to(out)) if not single else ".",
                "final_avg_reward": float(avg[-1]),
                "avg_regret": comparator - float(avg[-1]),
                "explore_rounds": int(explore.sum()),
                "oracle_calls": int(getattr(oracle, "n_calls", 0)),
                "wall_time": wall,
            }
            if cfg.algo == "vcee":
                record["solver_iterations"] = int(learner.solver_iterations_)
                record["solver_switches"] = int(learner.solver_switches_)
                record["n_solves"] = int(learner.n_solves_)
            if cfg.algo == "eels":
                record["w_hat"] = None if learner.w_hat_ is None else learner.w_hat_.tolist()
                record["explore_rounds"] = learner.explore_rounds_
            runs.append(record)
            log.info("%s params=%s seed=%d avg_reward=%.4f", cfg.algo, params, seed, avg[-1])

    checkpoints = sorted({min(max(int(t), 1), cfg.T) for t in cfg.checkpoints} | {cfg.T})
    by_param = []
    for i, params in enumerate(points):
        mean_curve = curves[i].mean(axis=0)
        by_param.append({
            "index": i,
            "params": params,
            "mean_final_avg_reward": float(mean_curve[-1]),
            "mean_avg_reward_at": {str(t): float(mean_curve[t - 1]) for t in checkpoints},
        })
    best_at_t = []
    for t in checkpoints:
        means = [curves[i][:, t - 1].mean() for i in range(len(points))]
        k = int(np.argmax(means))
        best_at_t.append({"t": t, "index": k, "params": points[k],
                          "mean_avg_reward": float(means[k])})

    summary = _json_safe({
        "algo": cfg.algo,
        "T": cfg.T,
        "seeds": cfg.seeds,
        "env": cfg.env,
        "oracle_reward": oracle_reward,
        "best_in_class_reward": best_in_class,
        "final_avg_reward": best_at_t[-1]["mean_avg_reward"],
        "avg_regret": comparator - best_at_t[-1]["mean_avg_reward"],
        "best_at_t": best_at_t,
        "by_param": by_param,
        "runs": runs,
        "oracle_calls": sum(r["oracle_calls"] for r in runs),
        "wall_time": time.perf_counter() - started,
    })
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExperimentResult(summary, curves, points)


def configure_logging():
    level = os.environ.get("SEMIBANDIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
