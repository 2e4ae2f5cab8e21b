"""Shared-parameter multi-robot training loop with a curriculum and replay."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, asdict, fields

import numpy as np

from . import sim
from .experiments import compute_metrics
from .models import (LearnedPolicy, RiskConfig, build_model, copy_params, dqn_targets, iqn_action_values,
                     iqn_td_deltas, save_checkpoint)
from .nn import Adam, dqn_loss, iqn_loss
from .rollout import run_episode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = "iqn"
    t_total: int = 200_000
    eps_max: float = 0.6
    eps_min: float = 0.05
    decay_fraction: float = 0.25
    l_episode_max: int = 1000
    t_learn_freq: int = 4
    t_eval_freq: int = 60_000
    batch_size: int = 64
    gamma: float = 0.99
    buffer_capacity: int = 100_000
    target_sync: int = 1000
    learning_rate: float = 1e-4
    n_tau: int = 8
    n_tau_prime: int = 8
    k_samples: int = 32
    kappa: float = 1.0
    encoder_width: int = 64
    head_width: int = 128
    eval_per_level: int = 10
    eval_seed: int = 2023
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.eps_min <= self.eps_max <= 1:
            raise ValueError("need 0 <= eps_min <= eps_max <= 1")
        for name in ("t_total", "l_episode_max", "t_learn_freq", "t_eval_freq", "batch_size",
                     "buffer_capacity", "target_sync"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.decay_fraction <= 1:
            raise ValueError("decay_fraction must lie in (0, 1]")
        if self.model_kind not in ("iqn", "dqn"):
            raise ValueError("model_kind must be 'iqn' or 'dqn'")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def epsilon_at(t: int, config: TrainConfig) -> float:
    """Linear decay from eps_max to eps_min over the first decay_fraction of steps."""
    if not 0 <= t <= config.t_total:
        raise ValueError(f"step {t} outside [0, {config.t_total}]")
    t_end = config.decay_fraction * config.t_total
    if t >= t_end:
        return config.eps_min
    return config.eps_max + (config.eps_min - config.eps_max) * t / t_end


@dataclass(frozen=True)
class CurriculumSchedule:
    """Stage k covers global steps in (boundary[k-1], boundary[k]]."""

    boundaries: tuple
    levels: tuple

    def __post_init__(self):
        if len(self.boundaries) != len(self.levels) or not self.levels:
            raise ValueError("one boundary per stage required")
        if any(b2 <= b1 for b1, b2 in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("stage boundaries must be strictly increasing")

    @classmethod
    def default(cls, t_total: int = 6_000_000) -> "CurriculumSchedule":
        n = len(sim.CURRICULUM_LEVELS)
        bounds = tuple(round(t_total * (k + 1) / n) for k in range(n))
        return cls(bounds, sim.CURRICULUM_LEVELS)

    def stage_index(self, step: int) -> int:
        for k, b in enumerate(self.boundaries):
            if step <= b:
                return k
        return len(self.levels) - 1

    def level_for(self, step: int) -> sim.CurriculumLevel:
        return self.levels[self.stage_index(step)]


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling (no repeats within a batch)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, sim.OBS_DIM))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, sim.OBS_DIM))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, done) -> None:
        k = self.cursor
        self.s[k], self.a[k], self.r[k], self.s2[k], self.done[k] = s, a, r, s2, float(done)
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if batch_size > self.size:
            raise ValueError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]


def compute_loss(batch, model, target_model, config: TrainConfig, rng):
    """Loss value and parameter gradients for one batch."""
    if model.kind == "iqn":
        deltas, taus, _, cache = iqn_td_deltas(batch, model, target_model, config.n_tau, config.n_tau_prime,
                                               config.gamma, rng, return_cache=True)
        loss, d_deltas = iqn_loss(deltas, taus, config.kappa)
        # delta = target - Z_tau(s, a): dL/dZ = -sum_j dL/ddelta_ij
        dz_a = -d_deltas.sum(axis=2)
        B, N = taus.shape
        grad_out = np.zeros((B, N, sim.N_ACTIONS))
        grad_out[np.arange(B), :, batch[1]] = dz_a
        return loss, model.backward(cache, grad_out)
    targets = dqn_targets(batch, target_model, config.gamma)
    q, cache = model.forward(batch[0])
    B = len(targets)
    loss, dq = dqn_loss(q[np.arange(B), batch[1]], targets)
    grad_out = np.zeros_like(q)
    grad_out[np.arange(B), batch[1]] = dq
    return loss, model.backward(cache, grad_out)


def learn_step(buffer: ReplayBuffer, model, target_model, optimizer: Adam, config: TrainConfig, rng) -> float:
    """One optimizer update; hard-syncs the target every ``target_sync`` updates."""
    batch = buffer.sample(config.batch_size, rng)
    loss, grads = compute_loss(batch, model, target_model, config, rng)
    optimizer.step(grads)
    if optimizer.t % config.target_sync == 0:
        copy_params(model, target_model)
    return loss


def make_eval_envs(seed: int, per_level: int = 10, levels=sim.CURRICULUM_LEVELS, params=None) -> list:
    """``per_level`` fixed environments for every curriculum level, as (level_index, World)."""
    envs = []
    for li, level in enumerate(levels):
        for e in range(per_level):
            ss = np.random.SeedSequence([seed, li, e])
            envs.append((li + 1, sim.generate_environment(level, int(ss.generate_state(1)[0]), params)))
    return envs


def evaluate_checkpoint(model, eval_envs, policy_mode: str = "greedy", max_steps: int = 1000, seed: int = 0,
                        d0: float = 10.0) -> dict:
    """Greedy (or adaptive) rollouts on fixed environments, aggregated per level."""
    risk = RiskConfig("adaptive", d0=d0) if policy_mode == "adaptive" else RiskConfig("greedy")
    policy = model if hasattr(model, "act") else LearnedPolicy(model, risk)
    records = []
    for k, (level, world) in enumerate(eval_envs):
        rng = np.random.default_rng([seed, k])
        records.append(run_episode(world.copy(), policy, max_steps, rng, k, level))
    summary = compute_metrics(records)
    return {m.level: {"episodes": m.episodes, "success_rate": m.success_rate, "mean_reward": m.mean_reward,
                      "travel_time": m.travel_time["mean"], "energy": m.energy["mean"]}
            for m in summary.levels}


class _Trainer:
    def __init__(self, config: TrainConfig, schedule: CurriculumSchedule, out_dir=None):
        self.config = config
        self.schedule = schedule
        self.out_dir = out_dir
        root = np.random.SeedSequence(config.seed)
        init_ss, env_ss, act_ss, learn_ss = root.spawn(4)
        self.env_rng = np.random.default_rng(env_ss)
        self.act_rng = np.random.default_rng(act_ss)
        self.learn_rng = np.random.default_rng(learn_ss)
        self.model = build_model(config.model_kind, np.random.default_rng(init_ss), config.encoder_width,
                                 config.head_width)
        self.target = build_model(config.model_kind, None, config.encoder_width, config.head_width)
        copy_params(self.model, self.target)
        self.optimizer = Adam(self.model.params, lr=config.learning_rate)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.eval_envs = make_eval_envs(config.eval_seed, config.eval_per_level)
        self.eval_log = []
        self.episodes = 0
        self.env_levels = []  # (global step, CurriculumLevel) per generated environment

    def new_world(self, step: int) -> sim.World:
        level = self.schedule.level_for(step)
        self.env_levels.append((step, level))
        self.episodes += 1
        return sim.generate_environment(level, self.env_rng)

    def select_actions(self, world, ids, obs, eps):
        explore = self.act_rng.random(len(ids)) < eps
        random_actions = self.act_rng.integers(sim.N_ACTIONS, size=len(ids))
        greedy = [k for k in range(len(ids)) if not explore[k]]
        actions = {i: int(a) for i, a in zip(ids, random_actions)}
        if greedy:
            batch = np.stack([obs[ids[k]] for k in greedy])
            if self.model.kind == "iqn":
                values = iqn_action_values(self.model, batch, 1.0, self.config.k_samples, self.act_rng)
            else:
                values, _ = self.model.forward(batch)
            for k, a in zip(greedy, np.argmax(values, axis=1)):
                actions[ids[k]] = int(a)
        return actions

    def run(self, on_transition=None):
        cfg = self.config
        world = self.new_world(1)
        obs = {i: world.observe(i) for i in world.active_ids()}
        l_episode = 0
        losses = []
        for t in range(1, cfg.t_total + 1):
            ids = world.active_ids()
            actions = self.select_actions(world, ids, obs, epsilon_at(t, cfg))
            results = world.step(actions)
            next_obs = {}
            for i in ids:
                res = results[i]
                s2 = world.observe(i, allow_inactive=True)
                terminal = res.status in (sim.Status.REACHED_GOAL, sim.Status.COLLIDED)
                self.buffer.add(obs[i], actions[i], res.reward, s2, terminal)
                if on_transition is not None:
                    on_transition(t, i, actions[i], res)
                if not terminal:
                    next_obs[i] = s2
            if t % cfg.t_learn_freq == 0 and len(self.buffer) >= cfg.batch_size:
                losses.append(learn_step(self.buffer, self.model, self.target, self.optimizer, cfg,
                                         self.learn_rng))
            if t % cfg.t_eval_freq == 0:
                self.evaluate(t, losses)
                losses = []
            if l_episode > cfg.l_episode_max or not world.active_ids():
                world = self.new_world(t + 1)
                obs = {i: world.observe(i) for i in world.active_ids()}
                l_episode = 0
            else:
                obs = next_obs
                l_episode += 1
        if self.out_dir is not None:
            save_checkpoint(self.model, os.path.join(self.out_dir, "final.json"), cfg.t_total, cfg.seed)
        return self.model, self.eval_log

    def evaluate(self, t, losses):
        cfg = self.config
        levels = evaluate_checkpoint(self.model, self.eval_envs, "greedy", cfg.l_episode_max, cfg.eval_seed)
        record = {"step": t, "mean_loss": float(np.mean(losses)) if losses else None,
                  "episodes": self.episodes,
                  "levels": [{"level": k, **v} for k, v in sorted(levels.items())]}
        self.eval_log.append(record)
        log.info("step %d: success %s", t, [round(v["success_rate"], 2) for _, v in sorted(levels.items())])
        if self.out_dir is not None:
            with open(os.path.join(self.out_dir, "eval_log.jsonl"), "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            save_checkpoint(self.model, os.path.join(self.out_dir, f"checkpoint_{t}.json"), t, cfg.seed)


def train(config: TrainConfig, schedule: CurriculumSchedule | None = None, out_dir=None, on_transition=None):
    """Train one shared model; returns ``(model, evaluation_log)``.

    With ``out_dir`` set, writes ``eval_log.jsonl``, a checkpoint at every
    evaluation and ``final.json``.
    """
    schedule = schedule or CurriculumSchedule.default(config.t_total)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        open(os.path.join(out_dir, "eval_log.jsonl"), "w").close()
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(asdict(config), fh, indent=2, sort_keys=True)
    trainer = _Trainer(config, schedule, out_dir)
    return trainer.run(on_transition)
