"""Episode execution shared by training-time evaluation and the experiment harness."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sim import ACCELERATIONS, TURN_RATES, Action, Status, World


@dataclass
class StepRow:
    t: float
    x: float
    y: float
    theta: float
    speed: float
    accel: float
    turn_rate: float
    reward: float
    status: str


@dataclass
class EpisodeRecord:
    episode_id: int
    scenario: dict
    rows: dict = field(default_factory=dict)  # robot id -> list[StepRow]
    outcomes: list = field(default_factory=list)  # final Status value per robot
    level: int | None = None
    policy: str = ""

    @property
    def success(self) -> bool:
        return bool(self.outcomes) and all(o == Status.REACHED_GOAL.value for o in self.outcomes)

    def travel_time(self, robot_id: int) -> float | None:
        for row in self.rows.get(robot_id, []):
            if row.status == Status.REACHED_GOAL.value:
                return row.t
        return None

    def energy(self, robot_id: int) -> float:
        return sum(action_energy(r.accel, r.turn_rate) for r in self.rows.get(robot_id, []))

    def total_reward(self, robot_id: int) -> float:
        return sum(r.reward for r in self.rows.get(robot_id, []))


def action_energy(accel: float, turn_rate: float) -> float:
    """Normalized action magnitude: each channel scaled by its largest value."""
    return abs(accel) / max(ACCELERATIONS) + abs(turn_rate) / max(TURN_RATES)


def run_episode(world: World, policy, max_steps: int, rng: np.random.Generator, episode_id: int = 0,
                level: int | None = None, policy_name: str = "") -> EpisodeRecord:
    """Run until every robot has left (goal / collision) or ``max_steps`` elapse.

    Robots still moving at the deadline are marked Deactivated.
    """
    record = EpisodeRecord(episode_id, world.to_dict(), {i: [] for i in range(len(world.robots))},
                           level=level, policy=policy_name)
    dt = world.params.dt
    while world.steps < max_steps:
        ids = world.active_ids()
        if not ids:
            break
        actions = policy.act(world, ids, rng)
        results = world.step(actions)
        t = round(world.steps * dt, 9)
        for i, res in results.items():
            act = Action.from_index(actions.get(i, 4))
            s = res.next
            record.rows[i].append(StepRow(t, float(s.position[0]), float(s.position[1]), s.heading, s.speed,
                                          act.accel, act.turn_rate, res.reward, res.status.value))
    for robot in world.robots:
        if robot.status is Status.ACTIVE:
            robot.status = Status.DEACTIVATED
    record.outcomes = [r.status.value for r in world.robots]
    return record


class RandomPolicy:
    """Uniform random actions; the floor every learned policy must beat."""

    def act(self, world, ids, rng) -> dict:
        return {i: int(rng.integers(len(ACCELERATIONS) * len(TURN_RATES))) for i in ids}
