"""Training loops: the evolutionary-population method (romance) and the
rarl / rap / random / vanilla baselines, all built on one trajectory
collector that records the team view and the attacker view of each episode.

The team view stores chosen actions while rewards and transitions follow the
executed (possibly perturbed) actions; the attacker view stores negated
rewards.  During attacker phases the team acts greedily and its parameters
are frozen; during team phases every attacker is frozen.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .attack_env import BudgetedAttackEnv
from .attacker import (
    AttackerBatch,
    NullAttacker,
    RandomAttacker,
    SprqAttacker,
    population_loss,
    sprq_loss,
)
from .ego import EgoController, EpisodeBuffer
from .envs import make_env
from .evolution import (
    Archive,
    ArchiveEntry,
    export_distance_csv,
    quality,
    save_archive,
    select,
    update_archive,
)
from .stats import mean_ci95

METHODS = ("romance", "rarl", "rap", "random", "vanilla")

METRICS_FIELDS = ["generation", "protocol", "win_rate", "mean_return", "ci95"]


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    env_id: str = "chain_coop"
    env_kwargs: dict = field(default_factory=dict)
    method: str = "romance"
    seed: int = 0
    # team learner
    mixer: str = "qmix"
    hidden: int = 64
    embed: int = 32
    window: int = 4
    ego_lr: float = 4e-4
    gamma: float = 0.99
    target_interval: int = 200
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_fraction: float = 0.1
    buffer_episodes: int = 2000
    batch_episodes: int = 32
    ego_updates: int = 1
    # attack setting
    capacity: int = 4
    lam: float = 4e-2
    delta: float = 5e-2
    alpha: float = 0.1
    smoothing_b: float = 2e-2
    attacker_lr: float = 5e-4
    attacker_hidden: int = 64
    attacker_replay: int = 4096
    attacker_batch: int = 64
    attacker_target_interval: int = 200
    attacker_updates: int = 1
    attack_buffer_capacity: int = 256
    div_sample: int = 64
    # evolution
    n_p: int = 4
    n_a: int = 15
    threshold: float = 0.05
    n_gen: int = 800
    n_adv: int = 4
    n_ego: int = 4
    quality_episodes: int = 8
    # bookkeeping
    eval_every: int = 20
    eval_episodes: int = 16

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"train.method: unknown {self.method!r}, expected {METHODS}")
        for name in ("n_gen", "n_adv", "n_ego"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name}: must be >= 1")
        if self.n_p < 1 or self.n_p > self.n_a:
            raise ConfigError("train.n_p: must satisfy 1 <= n_p <= n_a")
        if self.capacity < 0:
            raise ConfigError("attack.capacity: must be >= 0")
        if not (0.0 < self.lam):
            raise ConfigError("attack.lam: must be > 0")
        if not (0.0 <= self.delta <= 1.0):
            raise ConfigError("attack.delta: must be in [0, 1]")
        if not (0.0 <= self.epsilon_final <= self.epsilon_start <= 1.0):
            raise ConfigError("ego.epsilon: need 0 <= final <= start <= 1")
        if self.mixer not in ("vdn", "qmix"):
            raise ConfigError(f"ego.mixer: unknown {self.mixer!r}")
        return self


@dataclass
class DualTrajectory:
    ego: dict      # obs/states/masks sequences, chosen actions, rewards
    adv: dict      # augmented observations, victim indices, negated rewards
    info: dict

    def __len__(self):
        return len(self.ego["rewards"])


def collect_traj(ego, attacker, attack_env, epsilon, ego_rng, adv_rng, on_step=None):
    """Roll one episode; both views, budget reset to capacity at the start."""
    state, obs, masks = attack_env.reset()
    ego.begin_episode()
    n_null = attack_env.spec.n_agents
    ego_view = {"obs": [obs], "states": [state], "masks": [masks], "actions": [], "rewards": []}
    adv_view = {"obs": [], "actions": [], "rewards": [], "next_obs": [], "done": []}
    done = False
    won = False
    t = 0
    while not done:
        actions, qs = ego.act(obs, masks, epsilon, ego_rng)
        s_bar = attack_env.attacker_obs()
        victim = attacker.sample_victim(s_bar, attack_env.budget.remaining, adv_rng)
        rec = attack_env.step(actions, victim, qs)
        res = rec.result
        if on_step is not None:
            on_step(t, rec)
        t += 1
        ego_view["actions"].append(rec.chosen)
        ego_view["rewards"].append(res.reward)
        ego_view["obs"].append(res.obs)
        ego_view["states"].append(res.state)
        ego_view["masks"].append(res.masks)
        adv_view["obs"].append(s_bar)
        adv_view["actions"].append(n_null if victim is None else victim)
        adv_view["rewards"].append(-res.reward)
        adv_view["next_obs"].append(attack_env.attacker_obs())
        adv_view["done"].append(res.done)
        obs, masks, done = res.obs, res.masks, res.done
        won = bool(res.info.get("won", False))
    ego_ep = dict(
        obs=np.stack(ego_view["obs"]),
        states=np.stack(ego_view["states"]),
        masks=np.stack(ego_view["masks"]),
        actions=np.stack(ego_view["actions"]),
        rewards=np.asarray(ego_view["rewards"]),
    )
    adv_ep = dict(
        obs=np.stack(adv_view["obs"]),
        actions=np.asarray(adv_view["actions"], dtype=np.int64),
        rewards=np.asarray(adv_view["rewards"]),
        next_obs=np.stack(adv_view["next_obs"]),
        done=np.asarray(adv_view["done"], dtype=np.float64),
    )
    info = dict(
        length=len(ego_ep["rewards"]),
        episode_return=float(ego_ep["rewards"].sum()),
        won=won,
        attacks_selected=attack_env.attacks_selected,
        attacks_executed=attack_env.attacks_executed,
    )
    return DualTrajectory(ego_ep, adv_ep, info)


class TransitionBuffer:
    """Flat FIFO over attacker-view transitions."""

    def __init__(self, capacity=4096):
        self.capacity = capacity
        self.items = []

    def __len__(self):
        return len(self.items)

    def extend(self, adv_ep):
        for i in range(len(adv_ep["actions"])):
            self.items.append(
                (
                    adv_ep["obs"][i],
                    adv_ep["actions"][i],
                    adv_ep["rewards"][i],
                    adv_ep["next_obs"][i],
                    adv_ep["done"][i],
                )
            )
        if len(self.items) > self.capacity:
            self.items = self.items[-self.capacity :]

    def sample(self, batch, rng):
        if not self.items:
            raise ValueError("empty attacker replay")
        idx = rng.integers(0, len(self.items), size=min(batch, len(self.items)))
        rows = [self.items[i] for i in idx]
        return AttackerBatch(
            obs=np.stack([r[0] for r in rows]),
            actions=np.asarray([r[1] for r in rows], dtype=np.int64),
            rewards=np.asarray([r[2] for r in rows]),
            next_obs=np.stack([r[3] for r in rows]),
            done=np.asarray([r[4] for r in rows]),
        )


@dataclass
class TrainResult:
    config: TrainConfig
    ego: EgoController
    metrics: list
    stats: dict
    archive: Archive | None = None
    attackers: list = field(default_factory=list)
    run_dir: str | None = None


def _epsilon_schedule(cfg, total_episodes):
    ramp = max(1, int(total_episodes * cfg.epsilon_fraction))

    def eps(episode_idx):
        frac = min(1.0, episode_idx / ramp)
        return cfg.epsilon_start + frac * (cfg.epsilon_final - cfg.epsilon_start)

    return eps


def _member_grads(loss, leaves_list):
    """One backward pass; per-member gradient dicts aligned with params."""
    ad.backward(loss)
    out = []
    for leaves in leaves_list:
        out.append(
            {
                name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in leaves.items()
            }
        )
    return out


class _Run:
    """Shared plumbing across training methods for one seeded run."""

    def __init__(self, cfg, run_dir=None):
        cfg.validate()
        self.cfg = cfg
        self.run_dir = run_dir
        seq = np.random.SeedSequence(cfg.seed)
        (
            self.rng_init,
            self.rng_ego,
            self.rng_adv,
            self.rng_replay,
            self.rng_arch,
            self.rng_eval,
            self.rng_quality,
        ) = [np.random.default_rng(s) for s in seq.spawn(7)]
        self.env = make_env(cfg.env_id, **cfg.env_kwargs)
        self.env.reseed(cfg.seed)
        self.attack_env = BudgetedAttackEnv(self.env, cfg.capacity)
        gamma = cfg.gamma
        if cfg.env_id == "chain_coop":
            gamma = self.env.gamma
        self.gamma = gamma
        self.ego = EgoController(
            self.env.spec,
            mixer=cfg.mixer,
            hidden=cfg.hidden,
            embed=cfg.embed,
            window=cfg.window,
            lr=cfg.ego_lr,
            gamma=gamma,
            target_interval=cfg.target_interval,
            rng=self.rng_init,
        )
        self.replay = EpisodeBuffer(cfg.buffer_episodes, self.env.spec, cfg.window)
        self.metrics = []
        self.episode_idx = 0
        self.stats = dict(
            episodes=0,
            max_attacks_executed=0,
            max_attacks_selected=0,
            budget_violations=0,
            loss_counts={"sprq": 0, "population": 0},
        )

    def fresh_attacker(self):
        return SprqAttacker.fresh(
            self.attack_env.attacker_obs_len,
            self.env.spec.n_agents,
            self.cfg.lam,
            self.cfg.delta,
            hidden=self.cfg.attacker_hidden,
            rng=self.rng_init,
            buffer_capacity=self.cfg.attack_buffer_capacity,
        )

    def record_episode(self, info):
        self.stats["episodes"] += 1
        self.stats["max_attacks_executed"] = max(
            self.stats["max_attacks_executed"], info["attacks_executed"]
        )
        self.stats["max_attacks_selected"] = max(
            self.stats["max_attacks_selected"], info["attacks_selected"]
        )
        if info["attacks_executed"] > self.cfg.capacity:
            self.stats["budget_violations"] += 1

    def collect(self, attacker, epsilon):
        traj = collect_traj(
            self.ego, attacker, self.attack_env, epsilon, self.rng_ego, self.rng_adv
        )
        self.record_episode(traj.info)
        return traj

    def ego_phase_episode(self, attacker, eps_fn):
        traj = self.collect(attacker, eps_fn(self.episode_idx))
        self.episode_idx += 1
        self.replay.push(traj.ego)
        return traj

    def ego_update(self):
        loss = 0.0
        for _ in range(self.cfg.ego_updates):
            batch = self.replay.sample(self.cfg.batch_episodes, self.rng_replay)
            loss = self.ego.update(batch)
        return loss

    def attacker_quality(self, attacker):
        return quality(
            attacker,
            self.ego,
            self.attack_env,
            self.cfg.quality_episodes,
            self.gamma,
            self.rng_quality,
        )

    # -- periodic evaluation / checkpointing --------------------------------

    def eval_protocol(self, protocol):
        cfg = self.cfg
        if protocol == "natural":
            env = BudgetedAttackEnv(make_env(cfg.env_id, **cfg.env_kwargs), 0)
            attacker = NullAttacker()
        elif protocol == "random":
            env = BudgetedAttackEnv(make_env(cfg.env_id, **cfg.env_kwargs), cfg.capacity)
            attacker = RandomAttacker(
                self.env.spec.n_agents, cfg.capacity / self.env.spec.episode_limit
            )
        else:
            raise ValueError(f"unknown training-eval protocol {protocol!r}")
        wins, rets = [], []
        for _ in range(cfg.eval_episodes):
            traj = collect_traj(self.ego, attacker, env, 0.0, self.rng_eval, self.rng_eval)
            self.record_episode(traj.info)
            wins.append(float(traj.info["won"]))
            rets.append(traj.info["episode_return"])
        win_rate, _ = mean_ci95(wins)
        mean_ret, ci = mean_ci95(rets)
        return win_rate, mean_ret, ci

    def snapshot(self, generation, archive=None):
        for protocol in ("natural", "random"):
            win, ret, ci = self.eval_protocol(protocol)
            self.metrics.append(
                dict(
                    generation=generation,
                    protocol=protocol,
                    win_rate=win,
                    mean_return=ret,
                    ci95=ci,
                )
            )
        if self.run_dir is not None:
            gen_dir = os.path.join(self.run_dir, f"gen{generation}")
            os.makedirs(gen_dir, exist_ok=True)
            self.save_ego(os.path.join(gen_dir, "ego.ckpt"))
            if archive is not None and len(archive):
                save_archive(archive, os.path.join(gen_dir, "archive"))
            write_metrics_csv(os.path.join(gen_dir, "metrics.csv"), self.metrics)
            write_metrics_csv(os.path.join(self.run_dir, "metrics.csv"), self.metrics)

    def save_ego(self, path):
        cfg = self.cfg
        ad.save_params(
            path,
            self.ego.params,
            extra=dict(
                kind="ego",
                mixer=cfg.mixer,
                hidden=cfg.hidden,
                embed=cfg.embed,
                window=cfg.window,
                env_id=cfg.env_id,
                env_kwargs=cfg.env_kwargs,
                gamma=self.gamma,
            ),
        )

    def result(self, archive=None, attackers=()):
        if self.run_dir is not None:
            self.save_ego(os.path.join(self.run_dir, "ego.ckpt"))
            write_metrics_csv(os.path.join(self.run_dir, "metrics.csv"), self.metrics)
            if archive is not None and len(archive):
                arc_dir = os.path.join(self.run_dir, "archive")
                save_archive(archive, arc_dir)
                export_distance_csv(archive, os.path.join(arc_dir, "distances.csv"))
            elif attackers and hasattr(attackers[0], "params"):
                # persist non-archive attacker populations (rarl / rap) in the
                # same checkpoint format; quality 0 marks "never scored"
                arc = Archive(capacity=len(attackers), threshold=0.0)
                arc.entries = [
                    ArchiveEntry(a, 0.0, i + 1) for i, a in enumerate(attackers)
                ]
                save_archive(arc, os.path.join(self.run_dir, "attackers"))
        return TrainResult(
            config=self.cfg,
            ego=self.ego,
            metrics=self.metrics,
            stats=self.stats,
            archive=archive,
            attackers=list(attackers),
            run_dir=self.run_dir,
        )


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_FIELDS)
        for r in rows:
            w.writerow(
                [
                    r["generation"],
                    r["protocol"],
                    f"{r['win_rate']:.6f}",
                    f"{r['mean_return']:.6f}",
                    f"{r['ci95']:.6f}",
                ]
            )


# ---------------------------------------------------------------------------
# attacker update steps


def _sprq_update(run, attacker, replay, optimizer, update_counter):
    batch = replay.sample(run.cfg.attacker_batch, run.rng_replay)
    leaves = ad.bind(attacker.params)
    loss = sprq_loss(
        leaves, batch, attacker.target_params, attacker.lam, run.gamma, attacker.p_ref
    )
    grads = ad.backward(loss, leaves)
    attacker.params = optimizer.step(attacker.params, grads)
    run.stats["loss_counts"]["sprq"] += 1
    update_counter[0] += 1
    if update_counter[0] % run.cfg.attacker_target_interval == 0:
        attacker.sync_target()
    return float(loss.data)


def _population_update(run, population, replays, optimizers, update_counter):
    cfg = run.cfg
    batches = [rep.sample(cfg.attacker_batch, run.rng_replay) for rep in replays]
    leaves_list = [ad.bind(m.params) for m in population]
    points = [m.buffer.array() for m in population if len(m.buffer)]
    union = np.concatenate(points, axis=0) if points else np.zeros((0, 0))
    loss = population_loss(
        leaves_list,
        batches,
        [m.target_params for m in population],
        cfg.alpha,
        cfg.lam,
        run.gamma,
        population[0].p_ref,
        union,
        cfg.smoothing_b,
        rng=run.rng_replay,
        sample_size=cfg.div_sample,
    )
    grads = _member_grads(loss, leaves_list)
    for member, opt, g in zip(population, optimizers, grads):
        member.params = opt.step(member.params, g)
    run.stats["loss_counts"]["population"] += 1
    update_counter[0] += 1
    if update_counter[0] % cfg.attacker_target_interval == 0:
        for member in population:
            member.sync_target()
    return float(loss.data)


# ---------------------------------------------------------------------------
# training methods


def train_romance(cfg, run_dir=None):
    run = _Run(cfg, run_dir)
    cfg = run.cfg
    archive = Archive(cfg.n_a, cfg.threshold, cfg.smoothing_b)
    for _ in range(cfg.n_p):
        att = run.fresh_attacker()
        entry = ArchiveEntry(att, run.attacker_quality(att), archive.next_age())
        archive.entries.append(entry)
    eps_fn = _epsilon_schedule(cfg, cfg.n_gen * cfg.n_ego * cfg.n_p)
    for gen in range(1, cfg.n_gen + 1):
        selected = select(archive, cfg.n_p, run.rng_arch)
        population = [e.attacker.clone() for e in selected]
        replays = [TransitionBuffer(cfg.attacker_replay) for _ in population]
        optimizers = [ad.RmsProp(cfg.attacker_lr) for _ in population]
        counter = [0]
        for _ in range(cfg.n_adv):
            for member, rep in zip(population, replays):
                traj = run.collect(member, 0.0)
                rep.extend(traj.adv)
            for _ in range(cfg.attacker_updates):
                _population_update(run, population, replays, optimizers, counter)
        for _ in range(cfg.n_ego):
            for member in population:
                run.ego_phase_episode(member, eps_fn)
            run.ego_update()
        for entry in {id(e): e for e in selected}.values():
            entry.quality = run.attacker_quality(entry.attacker)
        new_entries = [
            ArchiveEntry(member, run.attacker_quality(member), 0)
            for member in population
        ]
        update_archive(archive, new_entries, run.rng_arch)
        if gen % cfg.eval_every == 0 or gen == cfg.n_gen:
            run.snapshot(gen, archive)
    return run.result(archive=archive, attackers=[e.attacker for e in archive.entries])


def train_rarl(cfg, run_dir=None):
    run = _Run(cfg, run_dir)
    cfg = run.cfg
    attacker = run.fresh_attacker()
    replay = TransitionBuffer(cfg.attacker_replay)
    optimizer = ad.RmsProp(cfg.attacker_lr)
    counter = [0]
    eps_fn = _epsilon_schedule(cfg, cfg.n_gen * cfg.n_ego)
    for gen in range(1, cfg.n_gen + 1):
        for _ in range(cfg.n_adv):
            traj = run.collect(attacker, 0.0)
            replay.extend(traj.adv)
            for _ in range(cfg.attacker_updates):
                _sprq_update(run, attacker, replay, optimizer, counter)
        for _ in range(cfg.n_ego):
            run.ego_phase_episode(attacker, eps_fn)
            run.ego_update()
        if gen % cfg.eval_every == 0 or gen == cfg.n_gen:
            run.snapshot(gen)
    return run.result(attackers=[attacker])


def train_rap(cfg, run_dir=None):
    run = _Run(cfg, run_dir)
    cfg = run.cfg
    population = [run.fresh_attacker() for _ in range(cfg.n_p)]
    replays = [TransitionBuffer(cfg.attacker_replay) for _ in population]
    optimizers = [ad.RmsProp(cfg.attacker_lr) for _ in population]
    counters = [[0] for _ in population]
    eps_fn = _epsilon_schedule(cfg, cfg.n_gen * cfg.n_ego * cfg.n_p)
    for gen in range(1, cfg.n_gen + 1):
        for _ in range(cfg.n_adv):
            for j, member in enumerate(population):
                traj = run.collect(member, 0.0)
                replays[j].extend(traj.adv)
                for _ in range(cfg.attacker_updates):
                    _sprq_update(run, member, replays[j], optimizers[j], counters[j])
        for _ in range(cfg.n_ego):
            for member in population:
                run.ego_phase_episode(member, eps_fn)
            run.ego_update()
        if gen % cfg.eval_every == 0 or gen == cfg.n_gen:
            run.snapshot(gen)
    return run.result(attackers=population)


def _train_fixed_attacker(cfg, run_dir, attacker_factory, train_capacity):
    run = _Run(cfg, run_dir)
    cfg = run.cfg
    if train_capacity != cfg.capacity:
        # vanilla trains on the unwrapped game; evaluation keeps the
        # experiment's budget
        run.attack_env = BudgetedAttackEnv(run.env, train_capacity)
    attacker = attacker_factory(run)
    eps_fn = _epsilon_schedule(cfg, cfg.n_gen * cfg.n_ego * cfg.n_p)
    for gen in range(1, cfg.n_gen + 1):
        for _ in range(cfg.n_ego):
            for _ in range(cfg.n_p):
                run.ego_phase_episode(attacker, eps_fn)
            run.ego_update()
        if gen % cfg.eval_every == 0 or gen == cfg.n_gen:
            run.snapshot(gen)
    return run.result()


def train_random(cfg, run_dir=None):
    def factory(run):
        # per-step attack rate K/T, hard-capped by the wrapper budget
        return RandomAttacker(
            run.env.spec.n_agents, cfg.capacity / run.env.spec.episode_limit
        )

    return _train_fixed_attacker(cfg, run_dir, factory, cfg.capacity)


def train_vanilla(cfg, run_dir=None):
    return _train_fixed_attacker(cfg, run_dir, lambda run: NullAttacker(), 0)


TRAINERS = {
    "romance": train_romance,
    "rarl": train_rarl,
    "rap": train_rap,
    "random": train_random,
    "vanilla": train_vanilla,
}


def train(cfg, run_dir=None):
    cfg.validate()
    return TRAINERS[cfg.method](cfg, run_dir)
