"""2-D marine navigation world: Rankine vortex currents, robots, obstacles.

Robots follow ``dX/dt = V_C(X) + V_S`` where ``V_C`` is the superposed vortex
current and ``V_S`` is the steering velocity controlled through discrete
(acceleration, turn rate) pairs.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np

ACCELERATIONS = (-0.4, 0.0, 0.4)
TURN_RATES = (-0.52, 0.0, 0.52)
N_ACTIONS = len(ACCELERATIONS) * len(TURN_RATES)

MAX_STATICS = 5
MAX_DYNAMICS = 5
EGO_DIM = 4
STATIC_DIM = 3
DYNAMIC_DIM = 4
OBS_DIM = EGO_DIM + MAX_STATICS * STATIC_DIM + MAX_DYNAMICS * DYNAMIC_DIM

R_STEP = -1.0
R_COLLISION = -50.0
R_GOAL = 100.0

OBSTACLE_RADIUS = 1.0


class Status(str, enum.Enum):
    ACTIVE = "active"
    REACHED_GOAL = "reached_goal"
    COLLIDED = "collided"
    DEACTIVATED = "deactivated"


class EnvironmentGenerationError(RuntimeError):
    """Rejection sampling could not place all entities."""


@dataclass(frozen=True)
class Action:
    accel: float
    turn_rate: float

    @property
    def index(self) -> int:
        return ACCELERATIONS.index(self.accel) * len(TURN_RATES) + TURN_RATES.index(self.turn_rate)

    @classmethod
    def from_index(cls, index: int) -> "Action":
        """Accel-major ordering: index = 3 * accel_idx + turn_idx."""
        if not 0 <= index < N_ACTIONS:
            raise ValueError(f"action index out of range: {index}")
        a, w = divmod(int(index), len(TURN_RATES))
        return cls(ACCELERATIONS[a], TURN_RATES[w])


ACTIONS = tuple(Action.from_index(i) for i in range(N_ACTIONS))


@dataclass(frozen=True)
class Vortex:
    center: np.ndarray
    gamma: float
    r0: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.r0 <= 0:
            raise ValueError("core radius must be positive")
        if self.gamma == 0:
            raise ValueError("circulation must be nonzero")

    @property
    def peak_speed(self) -> float:
        return abs(self.gamma) / (2 * math.pi * self.r0)


@dataclass(frozen=True)
class StaticObstacle:
    center: np.ndarray
    radius: float = OBSTACLE_RADIUS

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


@dataclass
class RobotState:
    position: np.ndarray
    heading: float
    speed: float
    goal: np.ndarray
    status: Status = Status.ACTIVE

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)

    @property
    def steer_velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])

    def dist_to_goal(self) -> float:
        return float(np.hypot(*(self.goal - self.position)))

    def copy(self) -> "RobotState":
        return replace(self, position=self.position.copy(), goal=self.goal.copy())


@dataclass(frozen=True)
class WorldParams:
    dt: float = 0.2
    v_max: float = 2.0
    robot_radius: float = 0.8
    goal_threshold: float = 2.0
    detection_range: float = 15.0
    workspace: float = 50.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class CurriculumLevel:
    robots: int
    vortices: int
    obstacles: int
    min_start_goal_distance: float


CURRICULUM_LEVELS = (
    CurriculumLevel(3, 4, 0, 30.0),
    CurriculumLevel(5, 6, 0, 35.0),
    CurriculumLevel(7, 8, 2, 40.0),
    CurriculumLevel(7, 8, 4, 40.0),
    CurriculumLevel(7, 8, 6, 40.0),
    CurriculumLevel(7, 8, 8, 40.0),
)


def wrap_angle(theta: float) -> float:
    """Normalize to [-pi, pi)."""
    return (theta + math.pi) % (2 * math.pi) - math.pi


def rankine_velocity(vortex: Vortex, point) -> np.ndarray:
    """Tangential Rankine vortex velocity at ``point`` (shape (2,) or (N, 2))."""
    return VortexField([vortex]).velocity(point)


class VortexField:
    """Linear superposition of Rankine vortices, evaluated in one vectorized pass."""

    def __init__(self, vortices):
        vortices = list(vortices)
        self.centers = np.array([v.center for v in vortices], dtype=float).reshape(-1, 2)
        self.coef = np.array([v.gamma / (2 * math.pi) for v in vortices], dtype=float)
        self.r0_sq = np.array([v.r0 * v.r0 for v in vortices], dtype=float)

    def velocity(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 2)
        if not len(self.coef):
            return np.zeros(pts.shape)
        d = flat[:, None, :] - self.centers[None, :, :]
        dx, dy = d[..., 0], d[..., 1]
        # |v| / r is coef / r0^2 inside the core and coef / r^2 outside
        scale = self.coef / np.maximum(dx * dx + dy * dy, self.r0_sq)
        v = np.empty_like(flat)
        v[:, 0] = -(dy * scale).sum(axis=1)
        v[:, 1] = (dx * scale).sum(axis=1)
        return v.reshape(pts.shape)


def current_at(vortices, point) -> np.ndarray:
    vf = vortices if isinstance(vortices, VortexField) else VortexField(vortices)
    return vf.velocity(point)


def step_robot(state: RobotState, action: Action, vortices, dt: float, v_max: float, current=None) -> RobotState:
    """Advance one control step: update steering first, then displace.

    ``current`` may carry a precomputed current velocity at the robot's position.
    """
    if state.status is not Status.ACTIVE:
        raise ValueError(f"cannot step a robot with status {state.status.value}")
    heading = wrap_angle(state.heading + action.turn_rate * dt)
    speed = min(max(state.speed + action.accel * dt, 0.0), v_max)
    if current is None:
        current = current_at(vortices, state.position)
    v_s = np.array([speed * math.cos(heading), speed * math.sin(heading)])
    position = state.position + (current + v_s) * dt
    return RobotState(position, heading, speed, state.goal.copy(), state.status)


def reward(prev: RobotState, nxt: RobotState, status: Status) -> float:
    r = R_STEP + (prev.dist_to_goal() - nxt.dist_to_goal())
    if status is Status.COLLIDED:
        r += R_COLLISION
    elif status is Status.REACHED_GOAL:
        r += R_GOAL
    return r


def _ego_rotation(heading: float) -> np.ndarray:
    """Right-multiplying row vectors by this matrix expresses them in the ego frame."""
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[c, -s], [s, c]])


@dataclass
class StepResult:
    prev: RobotState
    next: RobotState
    status: Status
    reward: float


@dataclass
class World:
    robots: list
    obstacles: list = field(default_factory=list)
    vortices: list = field(default_factory=list)
    params: WorldParams = field(default_factory=WorldParams)
    sim_time: float = 0.0
    seed: int | None = None
    steps: int = 0

    def _check_id(self, robot_id: int) -> RobotState:
        if not 0 <= robot_id < len(self.robots):
            raise KeyError(f"unknown robot id {robot_id}")
        return self.robots[robot_id]

    def active_ids(self) -> list:
        return [i for i, r in enumerate(self.robots) if r.status is Status.ACTIVE]

    def __post_init__(self):
        self.field = VortexField(self.vortices)

    def total_velocity(self, robot_id: int) -> np.ndarray:
        robot = self._check_id(robot_id)
        return self.field.velocity(robot.position) + robot.steer_velocity

    def total_velocities(self, ids) -> np.ndarray:
        """Ground velocities (current + steering) of several robots, shape (len(ids), 2)."""
        if not len(ids):
            return np.zeros((0, 2))
        robots = [self.robots[i] for i in ids]
        pos = np.array([r.position for r in robots])
        steer = np.array([[r.speed * math.cos(r.heading), r.speed * math.sin(r.heading)] for r in robots])
        return self.field.velocity(pos) + steer

    def copy(self) -> "World":
        return replace(self, robots=[r.copy() for r in self.robots], obstacles=list(self.obstacles),
                       vortices=list(self.vortices))

    def neighbors(self, robot_id: int):
        """Ground-truth entities inside detection range, nearest first.

        Returns ``(statics, dynamics)`` where statics is a list of
        ``(distance, StaticObstacle)`` and dynamics a list of
        ``(distance, other_id)`` restricted to other Active robots.
        """
        ego = self._check_id(robot_id)
        rng = self.params.detection_range
        statics = []
        for obs in self.obstacles:
            d = float(np.hypot(*(obs.center - ego.position)))
            if d <= rng:
                statics.append((d, obs))
        dynamics = []
        for j, other in enumerate(self.robots):
            if j == robot_id or other.status is not Status.ACTIVE:
                continue
            d = float(np.hypot(*(other.position - ego.position)))
            if d <= rng:
                dynamics.append((d, j))
        statics.sort(key=lambda t: t[0])
        dynamics.sort(key=lambda t: t[0])
        return statics, dynamics

    def observe(self, robot_id: int, allow_inactive: bool = False) -> np.ndarray:
        """Flat 39-vector in the ego frame: ego(4), statics(5x3), dynamics(5x4).

        ``allow_inactive`` builds the terminal next-state of a robot that has
        just left the episode.
        """
        ego = self._check_id(robot_id)
        if ego.status is not Status.ACTIVE and not allow_inactive:
            raise ValueError(f"robot {robot_id} is not active")
        statics, dynamics = self.neighbors(robot_id)
        statics = statics[:MAX_STATICS]
        dyn_ids = [j for _, j in dynamics[:MAX_DYNAMICS]]
        rot = _ego_rotation(ego.heading)
        vel = self.total_velocities([robot_id] + dyn_ids) @ rot
        obs = np.zeros(OBS_DIM)
        obs[0:2] = (ego.goal - ego.position) @ rot
        obs[2:4] = vel[0]
        if statics:
            block = obs[EGO_DIM:EGO_DIM + len(statics) * STATIC_DIM].reshape(-1, STATIC_DIM)
            block[:, :2] = (np.array([o.center for _, o in statics]) - ego.position) @ rot
            block[:, 2] = [o.radius for _, o in statics]
        if dyn_ids:
            off = EGO_DIM + MAX_STATICS * STATIC_DIM
            block = obs[off:off + len(dyn_ids) * DYNAMIC_DIM].reshape(-1, DYNAMIC_DIM)
            block[:, :2] = (np.array([self.robots[j].position for j in dyn_ids]) - ego.position) @ rot
            block[:, 2:] = vel[1:]
        return obs

    def transition_status(self, robot_id: int) -> Status:
        robot = self._check_id(robot_id)
        p = self.params
        for obs in self.obstacles:
            if np.hypot(*(robot.position - obs.center)) <= obs.radius + p.robot_radius:
                return Status.COLLIDED
        for j, other in enumerate(self.robots):
            if j != robot_id and other.status is Status.ACTIVE:
                if np.hypot(*(robot.position - other.position)) <= 2 * p.robot_radius:
                    return Status.COLLIDED
        if robot.dist_to_goal() <= p.goal_threshold:
            return Status.REACHED_GOAL
        return Status.ACTIVE

    def step(self, actions: dict) -> dict:
        """Move every Active robot simultaneously, then settle statuses.

        ``actions`` maps robot id to an action index (or Action); Active robots
        missing from it hold their controls (action (0, 0)). Status checks
        see all robots that were Active at the start of the step.
        """
        p = self.params
        ids = self.active_ids()
        prevs = {i: self.robots[i] for i in ids}
        currents = self.field.velocity(np.array([prevs[i].position for i in ids]).reshape(-1, 2))
        for k, i in enumerate(ids):
            act = actions.get(i, 4)
            if not isinstance(act, Action):
                act = Action.from_index(act)
            self.robots[i] = step_robot(prevs[i], act, self.field, p.dt, p.v_max, currents[k])
        statuses = {i: self.transition_status(i) for i in ids}
        results = {}
        for i in ids:
            self.robots[i].status = statuses[i]
            results[i] = StepResult(prevs[i], self.robots[i], statuses[i], reward(prevs[i], self.robots[i], statuses[i]))
        self.steps += 1
        self.sim_time = self.steps * p.dt
        return results

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "robots": [
                {"start": r.position.tolist(), "goal": r.goal.tolist(), "heading": r.heading, "speed": r.speed}
                for r in self.robots
            ],
            "obstacles": [{"center": o.center.tolist(), "radius": o.radius} for o in self.obstacles],
            "vortices": [{"center": v.center.tolist(), "gamma": v.gamma, "r0": v.r0} for v in self.vortices],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "World":
        return cls(
            robots=[RobotState(r["start"], r.get("heading", 0.0), r.get("speed", 0.0), r["goal"]) for r in doc["robots"]],
            obstacles=[StaticObstacle(o["center"], o["radius"]) for o in doc.get("obstacles", [])],
            vortices=[Vortex(v["center"], v["gamma"], v["r0"]) for v in doc.get("vortices", [])],
            params=WorldParams(**doc.get("params", {})),
            seed=doc.get("seed"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "World":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GenerationConfig:
    """Sampling ranges for random environments (all lengths in meters)."""

    gamma_range: tuple = (math.pi, 4 * math.pi)
    r0_range: tuple = (3.0, 8.0)
    max_peak_current: float = 1.5
    spawn_separation: float = 5.0
    obstacle_clearance: float = 1.0
    max_attempts: int = 2000


def _sample_vortex(rng: np.random.Generator, params: WorldParams, cfg: GenerationConfig) -> Vortex:
    center = rng.uniform(0.0, params.workspace, size=2)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    gamma = rng.uniform(*cfg.gamma_range)
    r0 = rng.uniform(*cfg.r0_range)
    peak = gamma / (2 * math.pi * r0)
    if peak > cfg.max_peak_current:
        gamma *= cfg.max_peak_current / peak
    return Vortex(center, sign * gamma, r0)


def generate_environment(level: CurriculumLevel, rng, params: WorldParams | None = None,
                         cfg: GenerationConfig | None = None) -> World:
    """Random world for a curriculum level; reproducible from ``rng``.

    ``rng`` may be a Generator or an integer seed.
    """
    params = params or WorldParams()
    cfg = cfg or GenerationConfig()
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    W = params.workspace
    if level.min_start_goal_distance >= W * math.sqrt(2):
        raise EnvironmentGenerationError("min start-goal distance exceeds workspace diagonal")

    vortices = [_sample_vortex(rng, params, cfg) for _ in range(level.vortices)]
    obstacles = [StaticObstacle(rng.uniform(0.0, W, size=2), OBSTACLE_RADIUS) for _ in range(level.obstacles)]
    keepout = OBSTACLE_RADIUS + params.robot_radius + cfg.obstacle_clearance

    def clear(p, taken):
        for o in obstacles:
            if np.hypot(*(p - o.center)) < keepout:
                return False
        return all(np.hypot(*(p - q)) >= cfg.spawn_separation for q in taken)

    starts, goals = [], []
    for _ in range(level.robots):
        for _attempt in range(cfg.max_attempts):
            s = rng.uniform(0.0, W, size=2)
            g = rng.uniform(0.0, W, size=2)
            if np.hypot(*(g - s)) < level.min_start_goal_distance:
                continue
            if clear(s, starts) and clear(g, goals):
                starts.append(s)
                goals.append(g)
                break
        else:
            raise EnvironmentGenerationError(
                f"could not place robot {len(starts)} after {cfg.max_attempts} attempts for {level}")
    robots = [RobotState(s, float(rng.uniform(-math.pi, math.pi)), 0.0, g) for s, g in zip(starts, goals)]
    return World(robots=robots, obstacles=obstacles, vortices=vortices, params=params, seed=seed)
