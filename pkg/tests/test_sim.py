import json
import math

import numpy as np
import pytest

from asvnav import sim
from asvnav.sim import (ACTIONS, Action, CurriculumLevel, EnvironmentGenerationError, GenerationConfig,
                        RobotState, Status, StaticObstacle, CURRICULUM_LEVELS, Vortex, World, WorldParams,
                        current_at, generate_environment, rankine_velocity, reward, step_robot)

from conftest import make_world, rankine_oracle


# --- actions -----------------------------------------------------------------

def test_action_index_bijection():
    assert len(ACTIONS) == 9
    assert {a.index for a in ACTIONS} == set(range(9))
    assert Action.from_index(4) == Action(0.0, 0.0)
    assert Action.from_index(0) == Action(-0.4, -0.52)
    assert Action.from_index(8) == Action(0.4, 0.52)
    assert Action.from_index(5) == Action(0.0, 0.52)


def test_action_index_out_of_range():
    with pytest.raises(ValueError):
        Action.from_index(9)


# --- Rankine vortex ----------------------------------------------------------

def test_rankine_zero_at_center():
    v = rankine_velocity(Vortex([0, 0], 2 * math.pi, 1.0), [0, 0])
    assert np.all(v == 0)


def test_rankine_at_core_radius():
    v = rankine_velocity(Vortex([0, 0], 2 * math.pi, 1.0), [1, 0])
    np.testing.assert_allclose(v, [0, 1], atol=1e-15)


def test_rankine_outside_core():
    v = rankine_velocity(Vortex([0, 0], 2 * math.pi, 1.0), [2, 0])
    np.testing.assert_allclose(v, [0, 0.5], atol=1e-15)


def test_rankine_negative_circulation_reverses():
    v = rankine_velocity(Vortex([0, 0], -2 * math.pi, 1.0), [1, 0])
    np.testing.assert_allclose(v, [0, -1], atol=1e-15)


def test_rankine_matches_polar_oracle(rng):
    for _ in range(200):
        c = rng.uniform(-10, 10, 2)
        gamma = rng.uniform(0.5, 15) * rng.choice([-1, 1])
        r0 = rng.uniform(0.5, 8)
        p = rng.uniform(-20, 20, 2)
        np.testing.assert_allclose(rankine_velocity(Vortex(c, gamma, r0), p), rankine_oracle(c, gamma, r0, p),
                                   rtol=1e-12, atol=1e-14)


def test_rankine_vectorized_points(rng):
    vortex = Vortex([1, 2], 3.0, 2.0)
    pts = rng.uniform(-5, 5, (7, 2))
    batch = rankine_velocity(vortex, pts)
    assert batch.shape == (7, 2)
    for p, v in zip(pts, batch):
        np.testing.assert_array_equal(v, rankine_velocity(vortex, p))


def test_vortex_validation():
    with pytest.raises(ValueError):
        Vortex([0, 0], 1.0, 0.0)
    with pytest.raises(ValueError):
        Vortex([0, 0], 0.0, 1.0)


def test_current_empty_list():
    assert np.all(current_at([], [3, 4]) == 0)


def test_current_mirrored_pair_doubles():
    single = Vortex([-1, 0], 2 * math.pi, 0.5)
    mirror = Vortex([1, 0], -2 * math.pi, 0.5)
    one = rankine_velocity(single, [0, 0])
    np.testing.assert_allclose(rankine_velocity(mirror, [0, 0]), one, atol=1e-15)
    np.testing.assert_allclose(current_at([single, mirror], [0, 0]), 2 * one, atol=1e-15)
    np.testing.assert_allclose(one, [0, 1], atol=1e-15)


def test_current_singleton_exact(rng):
    v = Vortex([3, -1], -4.0, 2.5)
    for p in rng.uniform(-8, 8, (20, 2)):
        np.testing.assert_array_equal(current_at([v], p), rankine_velocity(v, p))


def test_current_superposition(rng):
    vortices = [Vortex(rng.uniform(0, 50, 2), rng.uniform(3, 12), rng.uniform(3, 8)) for _ in range(6)]
    p = rng.uniform(0, 50, 2)
    total = sum(np.array(rankine_oracle(v.center, v.gamma, v.r0, p)) for v in vortices)
    np.testing.assert_allclose(current_at(vortices, p), total, rtol=1e-12, atol=1e-14)


# --- kinematics --------------------------------------------------------------

def test_step_straight_line():
    s = RobotState([0, 0], 0.0, 1.0, [10, 0])
    nxt = step_robot(s, Action(0.0, 0.0), [], 0.2, 2.0)
    np.testing.assert_allclose(nxt.position, [0.2, 0.0], atol=1e-15)


def test_step_current_cancels_steering():
    # robot at (1, 0) sits on the core radius where the current is (0, 1)
    s = RobotState([1, 0], -math.pi / 2, 1.0, [10, 0])
    nxt = step_robot(s, Action(0.0, 0.0), [Vortex([0, 0], 2 * math.pi, 1.0)], 0.2, 2.0)
    np.testing.assert_allclose(nxt.position, [1, 0], atol=1e-15)


def test_step_speed_increment_and_clamp():
    s = RobotState([0, 0], 0.0, 1.9, [10, 0])
    assert step_robot(s, Action(0.4, 0.0), [], 0.2, 2.0).speed == pytest.approx(1.98, abs=1e-12)
    s = RobotState([0, 0], 0.0, 2.0, [10, 0])
    assert step_robot(s, Action(0.4, 0.0), [], 0.2, 2.0).speed == 2.0
    s = RobotState([0, 0], 0.0, 0.0, [10, 0])
    assert step_robot(s, Action(-0.4, 0.0), [], 0.2, 2.0).speed == 0.0


def test_step_updates_heading_before_moving():
    s = RobotState([0, 0], 0.0, 1.0, [10, 0])
    nxt = step_robot(s, Action(0.4, 0.52), [], 0.2, 2.0)
    assert nxt.heading == pytest.approx(0.104, abs=1e-15)
    np.testing.assert_allclose(nxt.position, 0.2 * 1.08 * np.array([math.cos(0.104), math.sin(0.104)]),
                               atol=1e-15)


def test_step_wraps_heading():
    s = RobotState([0, 0], math.pi - 0.01, 1.0, [10, 0])
    h = step_robot(s, Action(0.0, 0.52), [], 0.2, 2.0).heading
    assert -math.pi <= h < math.pi
    assert h == pytest.approx(-math.pi + 0.094, abs=1e-12)


def test_step_rejects_inactive():
    s = RobotState([0, 0], 0.0, 1.0, [10, 0], Status.COLLIDED)
    with pytest.raises(ValueError):
        step_robot(s, Action(0.0, 0.0), [], 0.2, 2.0)


# --- observation -------------------------------------------------------------

def test_observe_no_neighbors_zero_padding():
    w = make_world([([10, 10], 0.3, 1.0, [40, 40])])
    obs = w.observe(0)
    assert obs.shape == (39,)
    assert np.all(obs[4:] == 0)


def test_observe_rotation_example():
    w = make_world([([10, 10], math.pi / 2, 0.0, [40, 40]), ([10, 15], 0.0, 0.0, [40, 10])])
    obs = w.observe(0)
    np.testing.assert_allclose(obs[19:21], [5, 0], atol=1e-12)


def test_observe_ego_block():
    # heading pi/2: global +y is ego +x, global +x is ego -y
    w = make_world([([10, 10], math.pi / 2, 1.5, [13, 14])])
    obs = w.observe(0)
    np.testing.assert_allclose(obs[0:2], [4, -3], atol=1e-12)
    np.testing.assert_allclose(obs[2:4], [1.5, 0], atol=1e-12)


def test_observe_ego_velocity_includes_current():
    vortex = Vortex([19, 0], 2 * math.pi, 1.0)  # robot on the core radius -> current (0, 1)
    w = make_world([([20, 0], 0.0, 1.0, [40, 40])], vortices=[vortex])
    np.testing.assert_allclose(w.observe(0)[2:4], [1.0, 1.0], atol=1e-12)


def test_observe_other_velocity_is_absolute_total():
    vortex = Vortex([0, 0], 2 * math.pi, 100.0)
    w = make_world([([10, 10], 0.0, 1.0, [40, 40]), ([15, 10], math.pi, 0.5, [0, 0])], vortices=[vortex])
    expected = np.array([-0.5, 0.0]) + np.array(rankine_oracle([0, 0], 2 * math.pi, 100.0, [15, 10]))
    np.testing.assert_allclose(w.observe(0)[21:23], expected, atol=1e-12)


def test_observe_keeps_five_nearest_statics():
    obstacles = [([10 + d, 10], 1.0) for d in (9.0, 3.0, 7.0, 4.0, 12.0, 5.0, 6.0)]
    w = make_world([([10, 10], 0.0, 0.0, [40, 40])], obstacles)
    obs = w.observe(0)
    xs = obs[4:19].reshape(5, 3)[:, 0]
    np.testing.assert_allclose(xs, [3, 4, 5, 6, 7])
    assert np.all(np.diff(xs) >= 0)
    np.testing.assert_allclose(obs[4:19].reshape(5, 3)[:, 2], 1.0)


def test_observe_detection_range():
    w = make_world([([10, 10], 0.0, 0.0, [40, 40]), ([26, 10], 0.0, 0.0, [0, 0])], [([10, 25.5], 1.0)])
    assert np.all(w.observe(0)[4:] == 0)


def test_observe_ignores_inactive_robots():
    w = make_world([([10, 10], 0.0, 0.0, [40, 40]), ([13, 10], 0.0, 0.0, [0, 0])])
    w.robots[1].status = Status.REACHED_GOAL
    assert np.all(w.observe(0)[19:] == 0)


def test_observe_errors():
    w = make_world([([10, 10], 0.0, 0.0, [40, 40])])
    with pytest.raises(KeyError):
        w.observe(3)
    w.robots[0].status = Status.COLLIDED
    with pytest.raises(ValueError):
        w.observe(0)
    assert w.observe(0, allow_inactive=True).shape == (39,)


# --- status and reward -------------------------------------------------------

def test_status_collision_boundary_is_collision():
    # 1.8 is exactly r_s + r_rob in floating point
    w = make_world([([0, 10], 0.0, 0.0, [40, 40])], [([1.8, 10], 1.0)])
    assert w.transition_status(0) is Status.COLLIDED


def test_status_robot_collision_boundary():
    w = make_world([([0, 10], 0.0, 0.0, [40, 40]), ([1.6, 10], 0.0, 0.0, [0, 0])])
    assert w.transition_status(0) is Status.COLLIDED


def test_status_goal_boundary_reached():
    w = make_world([([10, 10], 0.0, 0.0, [12, 10])])
    assert w.transition_status(0) is Status.REACHED_GOAL


def test_status_active_and_precedence():
    w = make_world([([10, 10], 0.0, 0.0, [40, 40])])
    assert w.transition_status(0) is Status.ACTIVE
    w = make_world([([10, 10], 0.0, 0.0, [11, 10])], [([10, 11.5], 1.0)])
    assert w.transition_status(0) is Status.COLLIDED
    with pytest.raises(KeyError):
        w.transition_status(1)


def test_reward_progress():
    prev = RobotState([0, 0], 0.0, 0.0, [10, 0])
    nxt = RobotState([0.5, 0], 0.0, 0.0, [10, 0])
    assert reward(prev, nxt, Status.ACTIVE) == pytest.approx(-0.5, abs=1e-12)


def test_reward_goal():
    prev = RobotState([7.7, 0], 0.0, 0.0, [10, 0])
    nxt = RobotState([8.0, 0], 0.0, 0.0, [10, 0])
    assert reward(prev, nxt, Status.REACHED_GOAL) == pytest.approx(99.3, abs=1e-12)


def test_reward_collision():
    prev = RobotState([0, 0], 0.0, 0.0, [10, 0])
    nxt = RobotState([0.2, 0], 0.0, 0.0, [10, 0])
    assert reward(prev, nxt, Status.COLLIDED) == pytest.approx(-50.8, abs=1e-12)


# --- world stepping ----------------------------------------------------------

def test_world_step_moves_simultaneously_and_removes():
    w = make_world([([10, 10], 0.0, 1.0, [11.5, 10]), ([30, 30], 0.0, 1.0, [0, 0])])
    res = w.step({0: 4, 1: 4})
    assert res[0].status is Status.REACHED_GOAL
    assert res[1].status is Status.ACTIVE
    assert w.active_ids() == [1]
    assert w.steps == 1 and w.sim_time == pytest.approx(0.2)
    res = w.step({1: 4})
    assert set(res) == {1}


def test_world_step_pairwise_collision_both_robots():
    w = make_world([([10, 10], 0.0, 1.0, [40, 10]), ([11.8, 10], math.pi, 1.0, [0, 10])])
    res = w.step({0: 4, 1: 4})
    assert res[0].status is Status.COLLIDED and res[1].status is Status.COLLIDED
    assert res[0].reward == pytest.approx(-1 + 0.2 - 50)


def test_world_default_action_holds_controls():
    w = make_world([([10, 10], 0.0, 1.0, [40, 10])])
    w.step({})
    np.testing.assert_allclose(w.robots[0].position, [10.2, 10])


# --- params and generation ---------------------------------------------------

def test_world_params_defaults_and_validation():
    p = WorldParams()
    assert (p.dt, p.v_max, p.robot_radius, p.goal_threshold, p.detection_range, p.workspace) == \
        (0.2, 2.0, 0.8, 2.0, 15.0, 50.0)
    with pytest.raises(ValueError):
        WorldParams(dt=0.0)


def test_curriculum_levels_levels():
    assert [(l.robots, l.vortices, l.obstacles, l.min_start_goal_distance) for l in CURRICULUM_LEVELS] == [
        (3, 4, 0, 30.0), (5, 6, 0, 35.0), (7, 8, 2, 40.0), (7, 8, 4, 40.0), (7, 8, 6, 40.0), (7, 8, 8, 40.0)]


@pytest.mark.parametrize("k", range(6))
def test_generation_respects_level(k):
    level = CURRICULUM_LEVELS[k]
    w = generate_environment(level, 100 + k)
    assert len(w.robots) == level.robots
    assert len(w.vortices) == level.vortices
    assert len(w.obstacles) == level.obstacles
    for r in w.robots:
        assert r.dist_to_goal() >= level.min_start_goal_distance
        assert r.speed == 0.0 and r.status is Status.ACTIVE
        for o in w.obstacles:
            assert np.hypot(*(r.position - o.center)) > o.radius + w.params.robot_radius
    for o in w.obstacles:
        assert o.radius == 1.0
    for v in w.vortices:
        assert math.pi <= abs(v.gamma) <= 4 * math.pi
        assert 3.0 <= v.r0 <= 8.0
        assert v.peak_speed <= 1.5 + 1e-12
    starts = np.array([r.position for r in w.robots])
    gaps = np.hypot(*(starts[:, None] - starts[None]).transpose(2, 0, 1))
    assert np.all(gaps[~np.eye(len(starts), dtype=bool)] > 2 * w.params.robot_radius)


def test_generation_deterministic():
    a = generate_environment(CURRICULUM_LEVELS[5], 7)
    b = generate_environment(CURRICULUM_LEVELS[5], 7)
    assert a.to_json() == b.to_json()
    assert generate_environment(CURRICULUM_LEVELS[5], 8).to_json() != a.to_json()


def test_generation_infeasible():
    level = CurriculumLevel(3, 1, 0, 500.0)
    with pytest.raises(EnvironmentGenerationError):
        generate_environment(level, 0, cfg=GenerationConfig(max_attempts=50))


def test_json_round_trip():
    w = generate_environment(CURRICULUM_LEVELS[3], 11)
    doc = json.loads(w.to_json())
    assert set(doc) == {"params", "robots", "obstacles", "vortices", "seed"}
    assert set(doc["robots"][0]) >= {"start", "goal"}
    back = World.from_json(w.to_json())
    assert back.to_json() == w.to_json()
    for a, b in zip(w.robots, back.robots):
        assert np.array_equal(a.position, b.position) and a.heading == b.heading
    for a, b in zip(w.vortices, back.vortices):
        assert np.array_equal(a.center, b.center) and a.gamma == b.gamma and a.r0 == b.r0


def test_copy_is_independent():
    w = generate_environment(CURRICULUM_LEVELS[0], 3)
    c = w.copy()
    c.step({i: 8 for i in c.active_ids()})
    assert w.steps == 0
    assert not np.array_equal(w.robots[0].position, c.robots[0].position)


def test_static_obstacle_validation():
    with pytest.raises(ValueError):
        StaticObstacle([0, 0], 0.0)
    assert sim.OBS_DIM == 39
