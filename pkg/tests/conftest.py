import math

import numpy as np
import pytest

from asvnav.sim import RobotState, StaticObstacle, Vortex, World


def make_world(robots, obstacles=(), vortices=(), **params):
    """Robots given as (position, heading, speed, goal) tuples."""
    from asvnav.sim import WorldParams

    return World(robots=[RobotState(*r) for r in robots],
                 obstacles=[o if isinstance(o, StaticObstacle) else StaticObstacle(*o) for o in obstacles],
                 vortices=[v if isinstance(v, Vortex) else Vortex(*v) for v in vortices],
                 params=WorldParams(**params))


def rankine_oracle(center, gamma, r0, point):
    """Polar-coordinate evaluation, independent of the vectorized implementation."""
    dx, dy = point[0] - center[0], point[1] - center[1]
    r = math.hypot(dx, dy)
    if r == 0:
        return (0.0, 0.0)
    speed = gamma / (2 * math.pi) * (r / r0**2 if r <= r0 else 1 / r)
    phi = math.atan2(dy, dx)
    return (-speed * math.sin(phi), speed * math.cos(phi))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")
    config.acceptance_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if report.passed else "FAIL"
    if report.skipped:
        status = "SKIP"
    item.config.acceptance_results[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "acceptance_results", {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results):
        status, title, detail = results[number]
        line = f"{status} criterion {number}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
