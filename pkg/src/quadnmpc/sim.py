"""Receding-horizon closed-loop simulation and run metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from numpy.typing import NDArray

from quadnmpc.model import INTEGRATORS, NX, THETA, ModelParams, X, Z
from quadnmpc.obstacle import ObstacleField
from quadnmpc.ocp import OcpConfig, OcpProblem, Weights
from quadnmpc.path import (
    BSplinePath,
    ReferenceTrajectory,
    build_from_waypoints,
    eval,
    sample_reference,
)
from quadnmpc.solver import (
    SolverConfig,
    SolverError,
    cold_start,
    shift_warm_start,
    solve,
)

log = logging.getLogger(__name__)

PITCH_LIMIT = math.pi / 2 - 0.1


@dataclass
class Scenario:
    name: str
    waypoints: NDArray[np.float64]
    degree: int = 3
    traversal_duration: float = 20.0
    sim_duration: float | None = None
    initial_state: NDArray[np.float64] | None = None
    params: ModelParams = field(default_factory=ModelParams)
    weights: Weights = field(default_factory=Weights)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    obstacles: ObstacleField = field(default_factory=ObstacleField)
    plant_integrator: str = "euler"
    wind: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    arrival_radius: float = 0.3
    warm_start: bool = True

    def __post_init__(self) -> None:
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        if self.sim_duration is None:
            self.sim_duration = self.traversal_duration
        if self.sim_duration < self.traversal_duration:
            raise ValueError("sim_duration must be >= traversal_duration")
        if not self.arrival_radius > 0:
            raise ValueError(f"arrival_radius must be > 0, got {self.arrival_radius}")
        if self.plant_integrator not in INTEGRATORS:
            raise ValueError(f"plant_integrator must be one of {sorted(INTEGRATORS)}")
        self.wind = np.asarray(self.wind, dtype=float).reshape(3)
        if self.initial_state is None:
            # start on the reference, moving with it
            self.initial_state = self.reference().states[0].copy()
        self.initial_state = np.asarray(self.initial_state, dtype=float).reshape(NX)

    def path(self) -> BSplinePath:
        return build_from_waypoints(self.waypoints, self.degree)

    def reference(self) -> ReferenceTrajectory:
        return sample_reference(self.path(), self.traversal_duration, self.ocp.dt, self.params.hover_thrust)

    @property
    def n_steps(self) -> int:
        return int(round(self.sim_duration / self.ocp.dt))


@dataclass
class SimLog:
    """Per-step records; row ``k`` is time ``k * dt``."""

    dt: float
    times: NDArray[np.float64]
    states: NDArray[np.float64]  # (K, 10) plant state when the solve started
    inputs: NDArray[np.float64]  # (K, 4) applied input
    references: NDArray[np.float64]  # (K, 10)
    iterations: NDArray[np.int64]
    solve_times: NDArray[np.float64]
    kkt_residuals: NDArray[np.float64]
    statuses: list[str]
    distances: NDArray[np.float64]  # (K, M)
    margins: NDArray[np.float64]  # (K, M)
    path_deviation: NDArray[np.float64]  # closest-point distance to the reference curve
    final_reference: NDArray[np.float64]

    def __len__(self) -> int:
        return len(self.times)

    @property
    def deviation(self) -> NDArray[np.float64]:
        return np.linalg.norm(self.states[:, X:Z + 1] - self.references[:, X:Z + 1], axis=1)


class SimulationAborted(RuntimeError):
    def __init__(self, message: str, log: SimLog) -> None:
        super().__init__(message)
        self.log = log


class _Recorder:
    def __init__(self, scenario: Scenario, ref: ReferenceTrajectory) -> None:
        self.dt = scenario.ocp.dt
        self.field = scenario.obstacles
        self.rows: dict[str, list] = {
            k: [] for k in ("states", "inputs", "references", "iterations", "solve_times", "kkt", "status")
        }
        self.final_reference = ref.positions[-1].copy()
        # dense polyline of the reference curve for closest-point deviation
        path = scenario.path()
        self.curve = eval(path, np.linspace(path.t_min, path.t_max, 2001))

    def add(self, x, u, x_ref, result) -> None:
        r = self.rows
        r["states"].append(x.copy())
        r["inputs"].append(u.copy())
        r["references"].append(x_ref.copy())
        r["iterations"].append(result.iterations)
        r["solve_times"].append(result.wall_time)
        r["kkt"].append(result.kkt_residual)
        r["status"].append(result.status)

    def build(self) -> SimLog:
        r = self.rows
        n = len(r["states"])
        states = np.array(r["states"]).reshape(n, NX)
        pos = states[:, X:Z + 1]
        centers, _, influence = self.field.arrays()
        dist = np.linalg.norm(pos[:, None, :] - centers[None, :, :], axis=2)
        closest = np.min(np.linalg.norm(pos[:, None, :] - self.curve[None, :, :], axis=2), axis=1) if n else np.zeros(0)
        return SimLog(
            dt=self.dt,
            times=np.arange(n) * self.dt,
            states=states,
            inputs=np.array(r["inputs"]).reshape(n, 4),
            references=np.array(r["references"]).reshape(n, NX),
            iterations=np.array(r["iterations"], dtype=np.int64),
            solve_times=np.array(r["solve_times"], dtype=float),
            kkt_residuals=np.array(r["kkt"], dtype=float),
            statuses=list(r["status"]),
            distances=dist,
            margins=dist - influence[None, :],
            path_deviation=closest,
            final_reference=self.final_reference,
        )


def run_closed_loop(s: Scenario) -> SimLog:
    """Solve, apply the first input, advance the plant; repeat.

    Records ``sim_duration / dt + 1`` steps. The controller always predicts
    with forward Euler; the plant uses ``s.plant_integrator`` and adds the
    constant wind acceleration.
    """
    ref = s.reference()
    p = s.params
    N, dt = s.ocp.N, s.ocp.dt
    plant_step = INTEGRATORS[s.plant_integrator]
    wind = s.wind if np.any(s.wind) else None
    rec = _Recorder(s, ref)

    x = s.initial_state.copy()
    u_prev = p.hover_input()
    decision = None
    for k in range(s.n_steps + 1):
        prob = OcpProblem(x, u_prev, ref.window(k, N + 1), s.weights, s.ocp, s.obstacles, p)
        if decision is None or not s.warm_start:
            init = cold_start(prob)
        else:
            init = shift_warm_start(decision, prob)
        try:
            result = solve(prob, init, s.solver)
        except SolverError as exc:
            raise SimulationAborted(f"step {k}: {exc}", rec.build()) from exc
        u = result.decision.controls[0].copy()
        rec.add(x, u, prob.ref_states[0], result)
        if result.status != "converged":
            log.debug("step %d: solver status %s (kkt %.3g)", k, result.status, result.kkt_residual)
        if k == s.n_steps:
            break
        x = plant_step(x, u, p, dt, wind)
        if not np.all(np.isfinite(x)):
            raise SimulationAborted(f"step {k}: plant state became non-finite", rec.build())
        if abs(x[THETA]) >= PITCH_LIMIT:
            raise SimulationAborted(f"step {k}: pitch {x[THETA]:.3f} rad exceeds the {PITCH_LIMIT:.3f} rad limit", rec.build())
        u_prev = u
        decision = result.decision
    return rec.build()


@dataclass
class Metrics:
    average_deviation: float
    maximum_deviation: float
    avg_solver_iterations: float
    avg_convergence_time: float
    thrust_min: float
    thrust_max: float
    total_time: float
    navigation_time: float | None
    safety_margin_violation_fraction: float
    hard_collision_count: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> Metrics:
        names = {f.name for f in fields(cls)}
        missing = names - set(data)
        if missing:
            raise ValueError(f"metrics report is missing {sorted(missing)}")
        return cls(**{k: data[k] for k in names})


def navigation_time(log: SimLog, radius: float) -> float | None:
    """First time after which the vehicle stays within ``radius`` of the final reference point."""
    d = np.linalg.norm(log.states[:, X:Z + 1] - log.final_reference, axis=1)
    outside = np.nonzero(d >= radius)[0]
    if outside.size == 0:
        return float(log.times[0])
    last = outside[-1]
    if last == len(log) - 1:
        return None
    return float(log.times[last + 1])


def compute_metrics(log: SimLog, s: Scenario) -> Metrics:
    if len(log) == 0:
        raise ValueError("cannot compute metrics from an empty log")
    dev = log.deviation
    _, radii, _ = s.obstacles.arrays()
    if log.margins.shape[1]:
        violation = float(np.mean(np.any(log.margins < 0, axis=1)))
        collisions = int(np.sum(np.any(log.distances < radii[None, :], axis=1)))
    else:
        violation, collisions = 0.0, 0
    return Metrics(
        average_deviation=float(np.mean(dev)),
        maximum_deviation=float(np.max(dev)),
        avg_solver_iterations=float(np.mean(log.iterations)),
        avg_convergence_time=float(np.mean(log.solve_times)),
        thrust_min=float(np.min(log.inputs[:, 0])),
        thrust_max=float(np.max(log.inputs[:, 0])),
        total_time=float(s.sim_duration),
        navigation_time=navigation_time(log, s.arrival_radius),
        safety_margin_violation_fraction=violation,
        hard_collision_count=collisions,
    )


def compare_runs(a: Metrics, b: Metrics) -> dict:
    """Per-metric deltas ``b - a`` and the navigation-time increase in percent."""
    if a.navigation_time is None or b.navigation_time is None:
        raise ValueError("both runs need a navigation time to compare")
    if a.navigation_time == 0:
        raise ValueError("baseline navigation time is zero; percentage increase undefined")
    deltas = {}
    for f in fields(Metrics):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        deltas[f.name] = vb - va
    return {
        "deltas": deltas,
        "time_increase_percent": 100.0 * (b.navigation_time - a.navigation_time) / a.navigation_time,
    }


def without_obstacles(s: Scenario) -> Scenario:
    """Same scenario and reference with the obstacle list emptied."""
    return replace(s, name=f"{s.name}-no-obstacles", obstacles=ObstacleField((), s.obstacles.eta))
