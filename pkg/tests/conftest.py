import numpy as np
import pytest

from quadnmpc.model import ModelParams, hover_state
from quadnmpc.obstacle import ObstacleField
from quadnmpc.ocp import OcpConfig, OcpProblem, Weights
from quadnmpc.path import ReferenceTrajectory
from quadnmpc.scenario_io import load_scenario
from quadnmpc.sim import compute_metrics, run_closed_loop, without_obstacles


def make_problem(scenario, step=0, x0=None, u_prev=None, N=None):
    """OCP of ``scenario`` at reference index ``step``."""
    ref = scenario.reference()
    ocp = scenario.ocp if N is None else OcpConfig(N=N, dt=scenario.ocp.dt)
    x0 = ref.states[step] if x0 is None else x0
    u_prev = scenario.params.hover_input() if u_prev is None else u_prev
    return OcpProblem(x0, u_prev, ref.window(step, ocp.N + 1), scenario.weights, ocp, scenario.obstacles, scenario.params)


def hover_problem(N=30, position=(0.0, 0.0, 1.5)):
    p = ModelParams()
    x = hover_state(position)
    ref = ReferenceTrajectory(0.05, np.tile(x, (N + 1, 1)), np.tile(p.hover_input(), (N + 1, 1)))
    return OcpProblem(x, p.hover_input(), ref, Weights(), OcpConfig(N=N), ObstacleField(), p)


@pytest.fixture(scope="session")
def hexagon():
    return load_scenario("hexagon")


@pytest.fixture(scope="session")
def multi():
    return load_scenario("multi_obstacle")


@pytest.fixture(scope="session")
def hexagon_run(hexagon):
    log = run_closed_loop(hexagon)
    return log, compute_metrics(log, hexagon)


@pytest.fixture(scope="session")
def multi_run(multi):
    log = run_closed_loop(multi)
    return log, compute_metrics(log, multi)


@pytest.fixture(scope="session")
def multi_free_run(multi):
    s = without_obstacles(multi)
    log = run_closed_loop(s)
    return log, compute_metrics(log, s)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
