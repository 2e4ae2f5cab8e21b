"""Non-learning baselines: improved artificial potential fields and RVO."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .sim import Action, World, wrap_angle

# candidate order encodes the tie-break: zero first, then negative
_ACCEL_ORDER = (0.0, -0.4, 0.4)
_TURN_ORDER = (0.0, -0.52, 0.52)
MIN_DISTANCE = 1e-6
TIE_TOL = 1e-9


class DegenerateInputError(ValueError):
    """Coincident positions or overlapping discs."""


@dataclass(frozen=True)
class ApfParams:
    k_att: float = 50.0
    k_rep: float = 500.0
    k_v: float = 1.0
    n: int = 2
    d0: float = 10.0
    accel_scale: float | None = None  # defaults to 1 / k_att

    def __post_init__(self):
        if min(self.k_att, self.k_rep, self.k_v, self.d0) <= 0:
            raise ValueError("APF constants must be positive")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("exponent n must be an integer >= 1")

    @property
    def scale(self) -> float:
        return 1.0 / self.k_att if self.accel_scale is None else self.accel_scale


def _apf_entities(world: World, robot_id: int, params: ApfParams):
    statics, dynamics = world.neighbors(robot_id)
    stat = [o.center for d, o in statics if d <= params.d0]
    dyn = [(world.robots[j].position, world.total_velocity(j)) for d, j in dynamics if d <= params.d0]
    return stat, dyn


def _goal_factor(x, goal, n):
    """(d_g^n, grad d_g^n) with d_g = |x - goal|."""
    diff = x - goal
    dg = math.hypot(*diff)
    if dg == 0.0:
        return (1.0 if n == 0 else 0.0), np.zeros(2)
    return dg**n, n * dg ** (n - 2) * diff


def apf_potential(world: World, robot_id: int, params: ApfParams = ApfParams(), position=None) -> float:
    """Total potential at ``position`` (default: the robot's own position).

    Obstacle and neighbour states, and the ego velocity, stay fixed; only the
    ego position varies. Used as the reference for gradient checks.
    """
    robot = world.robots[robot_id]
    x = robot.position if position is None else np.asarray(position, dtype=float)
    goal = robot.goal
    stat, dyn = _apf_entities(world, robot_id, params)
    v_ego = world.total_velocity(robot_id)
    dgn, _ = _goal_factor(x, goal, params.n)
    u = 0.5 * params.k_att * float(np.sum((x - goal) ** 2))
    for c in stat:
        d = math.hypot(*(x - c))
        if d <= params.d0:
            u += 0.5 * params.k_rep * (1 / d - 1 / params.d0) ** 2 * dgn
    for p, v in dyn:
        e = p - x
        d = math.hypot(*e)
        if d <= params.d0:
            u += 0.5 * params.k_rep * (1 / d - 1 / params.d0) ** 2 * dgn
            v_ao = float(np.dot(v_ego - v, e)) / d
            if v_ao > 0:
                u += params.k_v * v_ao / d
    return u


def apf_total_force(world: World, robot_id: int, params: ApfParams = ApfParams()) -> np.ndarray:
    """Negative analytic gradient of the attractive plus repulsive potentials."""
    robot = world.robots[robot_id]
    x, goal = robot.position, robot.goal
    stat, dyn = _apf_entities(world, robot_id, params)
    v_ego = world.total_velocity(robot_id)
    dgn, grad_dgn = _goal_factor(x, goal, params.n)
    grad = params.k_att * (x - goal)

    def rep_grad(center):
        diff = x - center
        d = math.hypot(*diff)
        if d < MIN_DISTANCE:
            raise DegenerateInputError("robot coincides with an obstacle")
        if d > params.d0:
            return None, d
        g = 1 / d - 1 / params.d0
        # d/dX of 0.5 k (1/d - 1/d0)^2 d_g^n, product rule
        return params.k_rep * (-g / d**3 * diff * dgn + 0.5 * g * g * grad_dgn), d

    for c in stat:
        g, _ = rep_grad(c)
        if g is not None:
            grad = grad + g
    for p, v in dyn:
        g, d = rep_grad(p)
        if g is None:
            continue
        grad = grad + g
        e = p - x
        v_rel = v_ego - v
        ve = float(np.dot(v_rel, e))
        if ve > 0:
            # U = k_v (v_rel . e) / d^2 with e = p - x
            grad = grad + params.k_v * (-v_rel / d**2 + 2 * ve * e / d**4)
    return -grad


def apf_action(force, heading: float, speed: float, dt: float = 0.2, scale: float = 1 / 50.0) -> Action:
    """Turn rate best aligning the heading with ``force`` after one step, and
    the acceleration nearest the scaled force component along the heading."""
    force = np.asarray(force, dtype=float)
    if not np.any(force):
        return Action(0.0, 0.0)
    target = math.atan2(force[1], force[0])
    w = min(_TURN_ORDER, key=lambda w: abs(wrap_angle(heading + w * dt - target)))
    along = scale * float(force @ np.array([math.cos(heading), math.sin(heading)]))
    a = min(_ACCEL_ORDER, key=lambda a: abs(a - along))
    return Action(a, w)


# velocity obstacles ----------------------------------------------------------

@dataclass(frozen=True)
class VelocityCone:
    """Cone in velocity space plus the disc that generated it.

    ``stretch`` is 1 for a plain VO and 2 for an RVO, where membership of v
    means ``2 v - v_A`` lies in the VO.
    """

    apex: np.ndarray
    axis: np.ndarray
    half_angle: float
    distance: float
    combined_radius: float
    stretch: float = 1.0

    def contains(self, v) -> bool:
        u = np.asarray(v, dtype=float) - self.apex
        n = math.hypot(*u)
        if n == 0.0:
            return False
        return float(u @ self.axis) / n >= math.cos(self.half_angle)


def velocity_obstacle(ego_pos, ego_radius: float, other_pos, other_radius: float, other_vel) -> VelocityCone:
    rel = np.asarray(other_pos, dtype=float) - np.asarray(ego_pos, dtype=float)
    d = math.hypot(*rel)
    R = ego_radius + other_radius
    if d <= R:
        raise DegenerateInputError("discs overlap; already in collision")
    return VelocityCone(np.asarray(other_vel, dtype=float).copy(), rel / d, math.asin(R / d), d, R)


def reciprocal_velocity_obstacle(vo: VelocityCone, ego_vel, other_vel) -> VelocityCone:
    apex = (np.asarray(ego_vel, dtype=float) + np.asarray(other_vel, dtype=float)) / 2
    return replace(vo, apex=apex, stretch=2.0)


def _ray_disc_time(u: np.ndarray, p: np.ndarray, R: float) -> float:
    pp = float(p @ p)
    if pp <= R * R:
        return 0.0
    uu = float(u @ u)
    if uu == 0.0:
        return math.inf
    up = float(u @ p)
    if up <= 0.0:
        return math.inf
    disc = up * up - uu * (pp - R * R)
    # grazing rays count as collisions
    if disc < -1e-9 * uu * pp:
        return math.inf
    return (up - math.sqrt(max(disc, 0.0))) / uu


def time_to_collision_batch(candidates: np.ndarray, cones, horizon: float = math.inf) -> np.ndarray:
    """Vectorized ``time_to_collision`` over an (M, 2) array of velocities."""
    candidates = np.asarray(candidates, dtype=float)
    best = np.full(len(candidates), math.inf)
    for cone in cones:
        p = cone.axis * cone.distance
        pp = float(p @ p)
        R2 = cone.combined_radius ** 2
        if pp <= R2:
            return np.zeros(len(candidates))
        u = cone.stretch * (candidates - cone.apex)
        uu = np.einsum("ij,ij->i", u, u)
        up = u @ p
        disc = up * up - uu * (pp - R2)
        hit = (uu > 0) & (up > 0) & (disc >= -1e-9 * uu * pp)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (up - np.sqrt(np.maximum(disc, 0.0))) / uu
        best = np.where(hit, np.minimum(best, t), best)
    best[best > horizon] = math.inf
    return best


def time_to_collision(candidate_vel, cones, horizon: float = math.inf) -> float:
    """Earliest ray-disc entry time over all cones; inf if none (or beyond ``horizon``)."""
    v = np.asarray(candidate_vel, dtype=float)
    best = math.inf
    for cone in cones:
        t = _ray_disc_time(cone.stretch * (v - cone.apex), cone.axis * cone.distance, cone.combined_radius)
        best = min(best, t)
    return best if best <= horizon else math.inf


@dataclass(frozen=True)
class RvoParams:
    w: float = 0.2
    preferred_speed: float | None = None  # defaults to v_max
    n_speeds: int = 8
    n_headings: int = 36
    tc_horizon: float = math.inf
    safety_margin: float = 0.4  # absorbs the lag of 9-action velocity tracking
    free_first: bool = True

    def __post_init__(self):
        if self.n_speeds < 1 or self.n_headings < 1:
            raise ValueError("velocity sample counts must be >= 1")
        if self.w < 0:
            raise ValueError("w must be nonnegative")

    @property
    def velocity_samples(self) -> int:
        return self.n_speeds * self.n_headings


def admissible_velocities(goal_angle: float, v_max: float, params: RvoParams) -> np.ndarray:
    """Speed-major grid; headings start at the goal direction so v_pref is a sample."""
    local = _local_samples(v_max, params)
    c, s = math.cos(goal_angle), math.sin(goal_angle)
    return local @ np.array([[c, s], [-s, c]])


def _local_samples(v_max: float, params: RvoParams) -> np.ndarray:
    speeds = np.linspace(v_max, 0.0, params.n_speeds) if params.n_speeds > 1 else np.array([v_max])
    angles = 2 * math.pi * np.arange(params.n_headings) / params.n_headings
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return (speeds[:, None, None] * dirs[None, :, :]).reshape(-1, 2)


def rvo_cones(world: World, robot_id: int, params: RvoParams) -> list:
    robot = world.robots[robot_id]
    r = world.params.robot_radius + params.safety_margin
    v_a = world.total_velocity(robot_id)
    statics, dynamics = world.neighbors(robot_id)
    cones = []
    for _, obs in statics:
        cones.append(_cone_or_blocked(robot.position, r, obs.center, obs.radius, np.zeros(2)))
    for _, j in dynamics:
        v_b = world.total_velocity(j)
        vo = _cone_or_blocked(robot.position, r, world.robots[j].position, world.params.robot_radius, v_b)
        cones.append(reciprocal_velocity_obstacle(vo, v_a, v_b))
    return cones


def _cone_or_blocked(p_a, r_a, p_b, r_b, v_b) -> VelocityCone:
    try:
        return velocity_obstacle(p_a, r_a, p_b, r_b, v_b)
    except DegenerateInputError:
        # inflated discs already overlap: every candidate gets tc = 0
        rel = np.asarray(p_b, dtype=float) - p_a
        d = max(math.hypot(*rel), MIN_DISTANCE)
        return VelocityCone(np.asarray(v_b, dtype=float), rel / d, math.pi / 2, d, r_a + r_b)


def rvo_select_velocity(world: World, robot_id: int, params: RvoParams = RvoParams()) -> np.ndarray:
    """Sampled velocity minimizing ``w / tc(v) + |v_pref - v|`` (first index wins ties)."""
    robot = world.robots[robot_id]
    to_goal = robot.goal - robot.position
    goal_angle = math.atan2(to_goal[1], to_goal[0])
    v_max = world.params.v_max
    pref_speed = v_max if params.preferred_speed is None else params.preferred_speed
    candidates = admissible_velocities(goal_angle, v_max, params)
    # deviation from v_pref measured in the goal frame so mirrored robots see identical numbers
    deviation = np.linalg.norm(_local_samples(v_max, params) - [pref_speed, 0.0], axis=1)
    cones = rvo_cones(world, robot_id, params)
    tcs = time_to_collision_batch(candidates, cones, params.tc_horizon)
    with np.errstate(divide="ignore"):
        inv_tc = np.where(np.isinf(tcs), 0.0, 1.0 / tcs)
    if params.w == 0:
        inv_tc = np.zeros_like(inv_tc)
    elif params.free_first and np.any(np.isinf(tcs)):
        # collision-free samples exist: never trade them for a penalized one
        inv_tc = np.where(np.isinf(tcs), 0.0, np.inf)
    penalty = params.w * inv_tc + deviation
    if np.all(np.isinf(penalty)):
        return candidates[int(np.argmax(tcs))]
    # ties within TIE_TOL go to the lowest sample index
    return candidates[int(np.argmin(np.round(penalty / TIE_TOL)))]


def velocity_action(v_new, heading: float, speed: float, dt: float, v_max: float) -> Action:
    """Single-step controls closest to a desired velocity vector."""
    v_new = np.asarray(v_new, dtype=float)
    target_speed = math.hypot(*v_new)
    if target_speed == 0.0:
        w = 0.0
    else:
        target = math.atan2(v_new[1], v_new[0])
        w = min(_TURN_ORDER, key=lambda w: abs(wrap_angle(heading + w * dt - target)))
    a = min(_ACCEL_ORDER, key=lambda a: abs(min(max(speed + a * dt, 0.0), v_max) - target_speed))
    return Action(a, w)


def rvo_action(world: World, robot_id: int, params: RvoParams = RvoParams()) -> Action:
    robot = world.robots[robot_id]
    v_new = rvo_select_velocity(world, robot_id, params)
    return velocity_action(v_new, robot.heading, robot.speed, world.params.dt, world.params.v_max)


@dataclass
class ApfPolicy:
    params: ApfParams = field(default_factory=ApfParams)

    def act(self, world: World, ids, rng=None) -> dict:
        out = {}
        for i in ids:
            robot = world.robots[i]
            try:
                force = apf_total_force(world, i, self.params)
            except DegenerateInputError:
                force = np.zeros(2)
            out[i] = apf_action(force, robot.heading, robot.speed, world.params.dt, self.params.scale).index
        return out


@dataclass
class RvoPolicy:
    params: RvoParams = field(default_factory=RvoParams)

    def act(self, world: World, ids, rng=None) -> dict:
        return {i: rvo_action(world, i, self.params).index for i in ids}

