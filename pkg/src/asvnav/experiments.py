"""Benchmark suites: paired random scenarios, policy runs, metrics, CSV export."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .classical import ApfPolicy, RvoPolicy
from .models import LearnedPolicy, RiskConfig, load_checkpoint
from .rollout import EpisodeRecord, RandomPolicy, run_episode
from .sim import CurriculumLevel, World, WorldParams, generate_environment

log = logging.getLogger(__name__)

POLICIES = ("apf", "rvo", "dqn", "iqn", "iqn-adaptive", "random")
SUITES = ("dynamic", "mixed")
CSV_COLUMNS = ("episode_id", "robot_id", "t", "x", "y", "theta", "speed", "accel", "turn_rate", "reward", "status")


@dataclass
class ExperimentConfig:
    suite: str = "dynamic"
    episodes_per_level: int = 100
    robot_counts: tuple = (3, 4, 5, 6, 7)
    min_start_goal_distance: float = 40.0
    timeout: float = 180.0
    policy: str = "apf"
    seed: int = 0
    adaptive_d0: float = 10.0

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ValueError(f"suite must be one of {SUITES}")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if self.timeout <= 0 or self.episodes_per_level < 1:
            raise ValueError("timeout and episodes_per_level must be positive")
        if any(not 3 <= k <= 7 for k in self.robot_counts):
            raise ValueError("robot counts must lie in 3..7")
        self.robot_counts = tuple(self.robot_counts)

    def levels(self) -> list:
        """Robot count k pairs with k + 1 vortices (and k + 1 obstacles in the mixed suite)."""
        return [CurriculumLevel(k, k + 1, k + 1 if self.suite == "mixed" else 0, self.min_start_goal_distance)
                for k in self.robot_counts]


def scenario_seed(seed: int, level_index: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, level_index, episode]).generate_state(1)[0])


def generate_suite(config: ExperimentConfig, params: WorldParams | None = None) -> list:
    """``(level_robot_count, episode_id, World)`` triples; independent of the policy."""
    out = []
    episode_id = 0
    for li, level in enumerate(config.levels()):
        for e in range(config.episodes_per_level):
            world = generate_environment(level, scenario_seed(config.seed, li, e), params)
            out.append((level.robots, episode_id, world))
            episode_id += 1
    return out


def make_policy(name: str, model_path=None, adaptive_d0: float = 10.0):
    if name == "apf":
        return ApfPolicy()
    if name == "rvo":
        return RvoPolicy()
    if name == "random":
        return RandomPolicy()
    if model_path is None:
        raise ValueError(f"policy {name!r} needs a model checkpoint")
    kind = "dqn" if name == "dqn" else "iqn"
    model = load_checkpoint(model_path, expected_kind=kind)
    risk = RiskConfig("adaptive", d0=adaptive_d0) if name == "iqn-adaptive" else RiskConfig("greedy")
    return LearnedPolicy(model, risk)


def run_experiment_suite(config: ExperimentConfig, model_path=None, policy=None, params=None):
    """Run every scenario of the suite; returns ``(summary, records)``."""
    policy = policy or make_policy(config.policy, model_path, config.adaptive_d0)
    records = []
    scenarios = generate_suite(config, params)
    for level, episode_id, world in scenarios:
        max_steps = int(round(config.timeout / world.params.dt))
        rng = np.random.default_rng([config.seed, episode_id, 7])
        records.append(run_episode(world, policy, max_steps, rng, episode_id, level, config.policy))
        if (episode_id + 1) % 50 == 0:
            log.info("%s: %d/%d episodes", config.policy, episode_id + 1, len(scenarios))
    return compute_metrics(records), records


def _stats(values) -> dict:
    if not values:
        return {"n": 0, "mean": None, "q1": None, "median": None, "q3": None}
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    return {"n": len(values), "mean": float(np.mean(values)), "q1": float(q1), "median": float(med),
            "q3": float(q3)}


@dataclass
class LevelMetrics:
    level: int
    episodes: int
    successes: int
    success_rate: float
    mean_reward: float
    travel_time: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)
    travel_times: list = field(default_factory=list)
    energies: list = field(default_factory=list)


@dataclass
class MetricsSummary:
    levels: list

    def by_level(self) -> dict:
        return {m.level: m for m in self.levels}

    def to_dict(self, include_samples: bool = True) -> dict:
        rows = []
        for m in self.levels:
            d = asdict(m)
            if not include_samples:
                d.pop("travel_times")
                d.pop("energies")
            rows.append(d)
        return {"levels": rows}


def compute_metrics(records) -> MetricsSummary:
    """Success rate per level; time and energy only from successful episodes."""
    records = list(records)
    if not records:
        raise ValueError("no episode records to summarize")
    grouped = {}
    for rec in records:
        grouped.setdefault(rec.level, []).append(rec)
    levels = []
    for level in sorted(grouped, key=lambda k: (k is None, k)):
        recs = grouped[level]
        times, energies, rewards = [], [], []
        for rec in recs:
            for i in range(len(rec.outcomes)):
                rewards.append(rec.total_reward(i))
                if rec.success:
                    times.append(rec.travel_time(i))
                    energies.append(rec.energy(i))
        successes = sum(rec.success for rec in recs)
        levels.append(LevelMetrics(level, len(recs), successes, successes / len(recs),
                                   float(np.mean(rewards)) if rewards else 0.0,
                                   _stats(times), _stats(energies), times, energies))
    return MetricsSummary(levels)


def export_trajectories(records, path) -> None:
    """One row per robot per step, robot-major then time, for one or many records."""
    if isinstance(records, EpisodeRecord):
        records = [records]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            for robot_id in sorted(rec.rows):
                for row in rec.rows[robot_id]:
                    values = (row.t, row.x, row.y, row.theta, row.speed, row.accel, row.turn_rate, row.reward)
                    writer.writerow([rec.episode_id, robot_id, *(repr(float(v)) for v in values), row.status])


def read_trajectories(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in CSV_COLUMNS:
            if key in ("episode_id", "robot_id"):
                row[key] = int(row[key])
            elif key != "status":
                row[key] = float(row[key])
    return rows


def write_scenarios(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({"episode_id": rec.episode_id, "level": rec.level, "scenario": rec.scenario},
                                sort_keys=True) + "\n")


def metrics_document(summary: MetricsSummary, config: ExperimentConfig) -> dict:
    doc = {"config": asdict(config), **summary.to_dict()}
    doc["config"]["robot_counts"] = list(config.robot_counts)
    return doc


def load_world(path) -> World:
    with open(path) as fh:
        return World.from_json(fh.read())

