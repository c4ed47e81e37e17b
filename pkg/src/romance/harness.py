"""Experiment runner: config parsing, protocol evaluation (natural / random
attack / evolved-attacker), budget-generalization sweeps, and report files.

All delimited outputs use fixed column sets and fixed float formatting so
identical config+seed pairs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from . import autodiff as ad
from .attack_env import BudgetedAttackEnv
from .attacker import NullAttacker, RandomAttacker
from .ego import EgoController
from .envs import make_env
from .evolution import Archive, export_distance_csv, load_archive_entries, save_archive
from .stats import mean_ci95
from .trainers import ConfigError, TrainConfig, collect_traj, train

PROTOCOLS = ("natural", "random", "ega")

SWEEP_FIELDS = ["budget", "win_rate", "mean_return", "ci95"]


@dataclass
class EvalSettings:
    episodes: int = 32
    seeds: list = field(default_factory=lambda: [100, 101, 102, 103, 104])
    protocols: list = field(default_factory=lambda: ["natural", "random"])
    ega_dir: str | None = None
    ega_top: int = 5
    ega_seeds: list = field(default_factory=lambda: [900, 901, 902])
    sweep_ks: list = field(default_factory=lambda: [0, 2, 4, 6, 8])


@dataclass
class ExperimentConfig:
    train: TrainConfig
    seeds: list
    evaluation: EvalSettings
    out_dir: str

    def validate(self):
        self.train.validate()
        if not self.seeds:
            raise ConfigError("train.seeds: need at least one seed")
        if self.evaluation.episodes < 1:
            raise ConfigError("eval.episodes: must be >= 1")
        for p in self.evaluation.protocols:
            if p not in PROTOCOLS:
                raise ConfigError(f"eval.protocols: unknown protocol {p!r}")
        if "ega" in self.evaluation.protocols:
            d = self.evaluation.ega_dir
            if d is None:
                raise ConfigError("eval.ega_dir: required when the ega protocol is listed")
            if not os.path.isdir(d):
                raise ConfigError(f"eval.ega_dir: directory does not exist: {d}")
        return self


_TRAIN_KEYS = {
    "method", "n_gen", "n_adv", "n_ego", "n_p", "n_a", "threshold",
    "quality_episodes", "eval_every", "eval_episodes",
}
_EGO_KEYS = {
    "mixer", "hidden", "embed", "window", "lr", "gamma", "target_interval",
    "epsilon_start", "epsilon_final", "epsilon_fraction", "buffer_episodes",
    "batch_episodes", "ego_updates",
}
_ATTACK_KEYS = {
    "capacity", "lam", "delta", "alpha", "smoothing_b", "attacker_lr",
    "attacker_hidden", "attacker_replay", "attacker_batch",
    "attacker_target_interval", "attacker_updates", "attack_buffer_capacity",
    "div_sample",
}
_EVAL_KEYS = {"episodes", "seeds", "protocols", "ega_dir", "ega_top", "ega_seeds", "sweep_ks"}


def _take(section, name, allowed):
    if not isinstance(section, dict):
        raise ConfigError(f"{name}: expected a mapping")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}: unknown field")
    return section


def load_config(path):
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        loc = f" (line {mark.line + 1})" if mark else ""
        raise ConfigError(f"{path}: yaml parse error{loc}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for key in raw:
        if key not in {"env", "train", "ego", "attack", "eval", "out_dir"}:
            raise ConfigError(f"{key}: unknown top-level field")
    env = _take(raw.get("env", {}), "env", {"id", "kwargs"})
    train_raw = _take(dict(raw.get("train", {})), "train", _TRAIN_KEYS | {"seeds"})
    ego = _take(raw.get("ego", {}), "ego", _EGO_KEYS)
    attack = _take(raw.get("attack", {}), "attack", _ATTACK_KEYS)
    ev = _take(raw.get("eval", {}), "eval", _EVAL_KEYS)
    seeds = train_raw.pop("seeds", [0, 1, 2, 3, 4])
    cfg = TrainConfig(
        env_id=env.get("id", "chain_coop"),
        env_kwargs=env.get("kwargs", {}) or {},
    )
    for key, val in train_raw.items():
        cfg = replace(cfg, **{key: val})
    for key, val in ego.items():
        field_name = "ego_lr" if key == "lr" else key
        cfg = replace(cfg, **{field_name: val})
    for key, val in attack.items():
        cfg = replace(cfg, **{key: val})
    evaluation = EvalSettings(**ev)
    out_dir = raw.get("out_dir")
    if not out_dir:
        raise ConfigError("out_dir: required")
    exp = ExperimentConfig(cfg, list(seeds), evaluation, out_dir)
    return exp.validate()


# ---------------------------------------------------------------------------
# ego checkpoints


def load_ego(path):
    params, extra = ad.load_params(path)
    if extra.get("kind") != "ego":
        raise ValueError(f"{path} is not an ego checkpoint")
    env = make_env(extra["env_id"], **extra.get("env_kwargs", {}))
    ego = EgoController(
        env.spec,
        mixer=extra["mixer"],
        hidden=extra["hidden"],
        embed=extra["embed"],
        window=extra["window"],
        gamma=extra.get("gamma", 0.99),
    )
    ego.params = params
    ego.target_params = params.copy()
    return ego, extra


def _dir_digest(dirpath):
    h = hashlib.sha256()
    for name in sorted(os.listdir(dirpath)):
        p = os.path.join(dirpath, name)
        if os.path.isfile(p):
            h.update(name.encode())
            with open(p, "rb") as f:
                h.update(f.read())
    return h.hexdigest()


def load_ega_attackers(dirpath, top=None):
    entries = load_archive_entries(dirpath)
    entries.sort(key=lambda ef: -ef[0].quality)
    if top is not None:
        entries = entries[:top]
    return [e.attacker for e, _ in entries]


# ---------------------------------------------------------------------------
# evaluation protocols


@dataclass
class EvalReport:
    protocol: str
    episodes: int
    win_rate: float
    mean_return: float
    ci95: float
    per_seed: list
    budget: int = 0

    def to_dict(self):
        return asdict(self)


def _episode_stats(ego, attacker, env, episodes, rng_env, rng_adv, on_step=None):
    wins, rets = [], []
    for _ in range(episodes):
        traj = collect_traj(ego, attacker, env, 0.0, rng_env, rng_adv, on_step=on_step)
        wins.append(float(traj.info["won"]))
        rets.append(traj.info["episode_return"])
        if traj.info["attacks_executed"] > env.capacity:
            raise AssertionError("budget invariant violated during evaluation")
    return float(np.mean(wins)), float(np.mean(rets))


def evaluate(ego, protocol, settings, episodes, seeds, env_id, env_kwargs=None,
             capacity=0, attackers=(), trace_path=None):
    """Greedy team rollouts under one protocol; mean and 95% CI over seeds.

    natural: zero-budget wrapper (identical to the raw env).
    random:  uniform victim at rate capacity/T, capped by the budget.
    ega:     averages over the provided attacker set (each gets `episodes`
             rollouts per seed).
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    env_kwargs = env_kwargs or {}
    per_seed = []
    writer = None
    if trace_path is not None:
        writer = open(trace_path, "w")
    try:
        for seed in seeds:
            seq = np.random.SeedSequence(seed)
            rng_env, rng_adv = [np.random.default_rng(s) for s in seq.spawn(2)]
            on_step = _trace_writer(writer) if writer else None
            if protocol == "natural":
                env = BudgetedAttackEnv(make_env(env_id, **env_kwargs), 0)
                env.reseed(seed)
                win, ret = _episode_stats(
                    ego, NullAttacker(), env, episodes, rng_env, rng_adv, on_step
                )
            elif protocol == "random":
                env = BudgetedAttackEnv(make_env(env_id, **env_kwargs), capacity)
                env.reseed(seed)
                rate = capacity / env.spec.episode_limit
                win, ret = _episode_stats(
                    ego,
                    RandomAttacker(env.spec.n_agents, rate),
                    env,
                    episodes,
                    rng_env,
                    rng_adv,
                    on_step,
                )
            else:
                if not attackers:
                    raise ValueError("ega protocol requires a nonempty attacker set")
                wins, rets = [], []
                for attacker in attackers:
                    # every attacker faces the same layout sequence per seed
                    env = BudgetedAttackEnv(make_env(env_id, **env_kwargs), capacity)
                    env.reseed(seed)
                    w, r = _episode_stats(
                        ego, attacker.clone(), env, episodes, rng_env, rng_adv, on_step
                    )
                    wins.append(w)
                    rets.append(r)
                win, ret = float(np.mean(wins)), float(np.mean(rets))
            per_seed.append({"seed": seed, "win_rate": win, "mean_return": ret})
    finally:
        if writer:
            writer.close()
    win_rate, _ = mean_ci95([r["win_rate"] for r in per_seed])
    mean_ret, ci = mean_ci95([r["mean_return"] for r in per_seed])
    return EvalReport(protocol, episodes, win_rate, mean_ret, ci, per_seed, capacity)


def _trace_writer(fh):
    def on_step(t, rec):
        fh.write(
            json.dumps(
                {
                    "t": t,
                    "chosen": rec.chosen.tolist(),
                    "victim": rec.victim,
                    "executed": rec.executed.tolist(),
                    "budget_after": rec.budget_after,
                    "reward": rec.result.reward,
                    "done": rec.result.done,
                }
            )
            + "\n"
        )

    return on_step


def evaluate_ega_dir(ego, ega_dir, settings, env_id, env_kwargs=None, capacity=4):
    """EGA evaluation from a checkpoint directory, with a before/after digest
    check proving the checkpoints were not mutated."""
    digest_before = _dir_digest(ega_dir)
    attackers = load_ega_attackers(ega_dir, settings.ega_top)
    report = evaluate(
        ego,
        "ega",
        settings,
        settings.episodes,
        settings.seeds,
        env_id,
        env_kwargs,
        capacity,
        attackers,
    )
    if _dir_digest(ega_dir) != digest_before:
        raise AssertionError(f"EGA checkpoints under {ega_dir} were modified")
    return report


def budget_sweep(ego, attackers, k_list, episodes, seeds, env_id, env_kwargs=None,
                 out_csv=None):
    """Re-run the evolved-attacker evaluation at each budget, ascending."""
    if not k_list:
        raise ValueError("budget list must be nonempty")
    reports = []
    for k in sorted(k_list):
        reports.append(
            evaluate(
                ego, "ega", None, episodes, seeds, env_id, env_kwargs, int(k), attackers
            )
        )
    if out_csv:
        with open(out_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(SWEEP_FIELDS)
            for r in reports:
                w.writerow(
                    [r.budget, f"{r.win_rate:.6f}", f"{r.mean_return:.6f}", f"{r.ci95:.6f}"]
                )
    return reports


# ---------------------------------------------------------------------------
# experiment entry points


def run(config_path, out_dir=None):
    """Train every seed, evaluate the final checkpoints, emit report.json.

    Returns a process exit code; nothing is written when the config fails
    validation.
    """
    try:
        exp = load_config(config_path)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}")
        return 2
    base = out_dir or exp.out_dir
    os.makedirs(base, exist_ok=True)
    reports = []
    for seed in exp.seeds:
        run_dir = os.path.join(base, str(seed))
        os.makedirs(run_dir, exist_ok=True)
        cfg = replace(exp.train, seed=seed)
        result = train(cfg, run_dir)
        seed_reports = _evaluate_final(result.ego, exp)
        reports.append(
            {
                "seed": seed,
                "run_dir": run_dir,
                "stats": _stats_dict(result.stats),
                "reports": [r.to_dict() for r in seed_reports],
            }
        )
    report = {
        "format_version": 1,
        "config": os.path.abspath(config_path),
        "method": exp.train.method,
        "env": exp.train.env_id,
        "seeds": exp.seeds,
        "runs": reports,
    }
    with open(os.path.join(base, "report.json"), "w") as f:
        json.dump(report, f, indent=2)
    return 0


def _stats_dict(stats):
    return {
        "episodes": stats["episodes"],
        "max_attacks_executed": stats["max_attacks_executed"],
        "max_attacks_selected": stats["max_attacks_selected"],
        "budget_violations": stats["budget_violations"],
        "loss_counts": dict(stats["loss_counts"]),
    }


def _evaluate_final(ego, exp):
    ev = exp.evaluation
    out = []
    for protocol in ev.protocols:
        if protocol == "ega":
            out.append(
                evaluate_ega_dir(
                    ego, ev.ega_dir, ev, exp.train.env_id, exp.train.env_kwargs,
                    exp.train.capacity,
                )
            )
        else:
            out.append(
                evaluate(
                    ego,
                    protocol,
                    ev,
                    ev.episodes,
                    ev.seeds,
                    exp.train.env_id,
                    exp.train.env_kwargs,
                    exp.train.capacity,
                )
            )
    return out


def eval_checkpoint(config_path, checkpoint, out_dir=None, trace_path=None):
    try:
        exp = load_config(config_path)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}")
        return 2
    ego, extra = load_ego(checkpoint)
    reports = []
    for protocol in exp.evaluation.protocols:
        if protocol == "ega":
            reports.append(
                evaluate_ega_dir(
                    ego, exp.evaluation.ega_dir, exp.evaluation, extra["env_id"],
                    extra.get("env_kwargs", {}), exp.train.capacity,
                )
            )
        else:
            reports.append(
                evaluate(
                    ego,
                    protocol,
                    exp.evaluation,
                    exp.evaluation.episodes,
                    exp.evaluation.seeds,
                    extra["env_id"],
                    extra.get("env_kwargs", {}),
                    exp.train.capacity,
                    trace_path=trace_path,
                )
            )
    base = out_dir or exp.out_dir
    os.makedirs(base, exist_ok=True)
    path = os.path.join(base, "eval_report.json")
    with open(path, "w") as f:
        json.dump(
            {
                "format_version": 1,
                "checkpoint": os.path.abspath(checkpoint),
                "reports": [r.to_dict() for r in reports],
            },
            f,
            indent=2,
        )
    for r in reports:
        print(
            f"{r.protocol}: win_rate={r.win_rate:.3f} return={r.mean_return:.3f} "
            f"ci95={r.ci95:.3f}"
        )
    return 0


def sweep_checkpoint(config_path, checkpoint, out_dir=None):
    try:
        exp = load_config(config_path)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}")
        return 2
    if exp.evaluation.ega_dir is None or not os.path.isdir(exp.evaluation.ega_dir):
        print("config error: eval.ega_dir: required for sweep")
        return 2
    ego, extra = load_ego(checkpoint)
    attackers = load_ega_attackers(exp.evaluation.ega_dir, exp.evaluation.ega_top)
    base = out_dir or exp.out_dir
    os.makedirs(base, exist_ok=True)
    out_csv = os.path.join(base, "sweep.csv")
    reports = budget_sweep(
        ego,
        attackers,
        exp.evaluation.sweep_ks,
        exp.evaluation.episodes,
        exp.evaluation.seeds,
        extra["env_id"],
        extra.get("env_kwargs", {}),
        out_csv=out_csv,
    )
    for r in reports:
        print(f"K={r.budget}: win_rate={r.win_rate:.3f} ci95={r.ci95:.3f}")
    return 0


def gen_attackers(config_path, out_dir=None):
    """Dedicated attacker-generation runs on held-out seeds; the merged
    top-quality archive entries land in <out>/attackers for EGA evaluation."""
    try:
        exp = load_config(config_path)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}")
        return 2
    base = out_dir or exp.out_dir
    os.makedirs(base, exist_ok=True)
    merged = []
    for seed in exp.evaluation.ega_seeds:
        cfg = replace(exp.train, method="romance", seed=seed)
        run_dir = os.path.join(base, "gen_attackers", str(seed))
        os.makedirs(run_dir, exist_ok=True)
        result = train(cfg, run_dir)
        entries = sorted(result.archive.entries, key=lambda e: -e.quality)
        merged.extend(entries[: exp.evaluation.ega_top])
    archive = Archive(capacity=max(len(merged), 1), threshold=0.0)
    archive.entries = merged
    target = os.path.join(base, "attackers")
    save_archive(archive, target)
    export_distance_csv(archive, os.path.join(target, "distances.csv"))
    print(f"saved {len(merged)} attackers to {target}")
    return 0
