"""Scenario files (JSON), run artifacts and their on-disk formats."""

from __future__ import annotations

import json
import os
import tempfile
from importlib import resources
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from quadnmpc.model import INPUT_NAMES, STATE_NAMES, ModelParams
from quadnmpc.obstacle import Obstacle, ObstacleField
from quadnmpc.ocp import OcpConfig, Weights
from quadnmpc.sim import Metrics, Scenario, SimLog
from quadnmpc.solver import SolverConfig

CSV_DIGITS = 9
BUNDLED = ("hexagon", "multi_obstacle", "straight", "hover")


class ScenarioFileError(ValueError):
    """Parse or validation failure, with a message pointing into the file."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Strict):
    m: float = Field(3.787, gt=0)
    g: float = Field(9.81, gt=0)
    b_x: float = Field(0.1, ge=0)
    b_y: float = Field(0.1, ge=0)
    b_z: float = Field(0.2, ge=0)
    tau_phi: float = Field(0.2, gt=0)
    tau_theta: float = Field(0.2, gt=0)
    tau_psi: float = Field(0.3, gt=0)
    k_phi: float = 1.0
    k_theta: float = 1.0
    k_psi: float = 1.0


class WeightsSection(_Strict):
    Q: list[float] = Field([10, 10, 10, 2, 2, 2, 1, 1, 1, 1], min_length=10, max_length=10)
    R: list[float] = Field([0.2, 0.5, 0.5, 0.1], min_length=4, max_length=4)
    R_delta: list[float] = Field([0.05, 0.1, 0.1, 0.05], min_length=4, max_length=4)
    Q_f: list[float] | None = Field(None, min_length=10, max_length=10)

    @field_validator("Q", "R", "R_delta", "Q_f")
    @classmethod
    def _nonneg(cls, v):
        if v is not None and any(x < 0 for x in v):
            raise ValueError("weights must be >= 0")
        return v


class OcpSection(_Strict):
    horizon: int = Field(30, ge=1)
    dt: float = Field(0.05, gt=0)
    u_min: list[float] = Field([5.0, -0.35, -0.35, -1.0], min_length=4, max_length=4)
    u_max: list[float] = Field([60.0, 0.35, 0.35, 1.0], min_length=4, max_length=4)
    obstacle_mode: Literal["penalty", "hard-constraint"] = "penalty"

    @model_validator(mode="after")
    def _ordered(self):
        if any(lo > hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("u_min must be <= u_max componentwise")
        return self


class SolverSection(_Strict):
    max_iterations: int = Field(50, ge=1)
    kkt_tolerance: float = Field(1e-6, gt=0)
    line_search_shrink: float = Field(0.5, gt=0, lt=1)
    line_search_min_step: float = Field(1e-8, gt=0)
    constraint_tolerance: float = Field(1e-8, gt=0)


class SphereSection(_Strict):
    center: list[float] = Field(min_length=3, max_length=3)
    radius: float = Field(gt=0)
    safety: float = Field(0.0, ge=0)


class ObstaclesSection(_Strict):
    eta: float = Field(10.0, ge=0)
    spheres: list[SphereSection] = []


class ScenarioFile(_Strict):
    name: str
    waypoints: list[list[float]] = Field(min_length=2)
    degree: int = Field(3, ge=1)
    traversal_duration: float = Field(20.0, gt=0)
    sim_duration: float | None = Field(None, gt=0)
    initial_state: list[float] | None = Field(None, min_length=10, max_length=10)
    model: ModelSection = ModelSection()
    weights: WeightsSection = WeightsSection()
    ocp: OcpSection = OcpSection()
    solver: SolverSection = SolverSection()
    obstacles: ObstaclesSection = ObstaclesSection()
    plant_integrator: Literal["euler", "rk4"] = "euler"
    wind: list[float] = Field([0.0, 0.0, 0.0], min_length=3, max_length=3)
    arrival_radius: float = Field(0.3, gt=0)
    warm_start: bool = True

    @field_validator("waypoints")
    @classmethod
    def _points(cls, v):
        if any(len(p) != 3 for p in v):
            raise ValueError("every waypoint needs 3 coordinates")
        return v

    @model_validator(mode="after")
    def _durations(self):
        if len(self.waypoints) < self.degree + 1:
            raise ValueError(f"degree {self.degree} needs at least {self.degree + 1} waypoints")
        if self.sim_duration is not None and self.sim_duration < self.traversal_duration:
            raise ValueError("sim_duration must be >= traversal_duration")
        return self

    def to_scenario(self) -> Scenario:
        spheres = [Obstacle(s.center, s.radius, s.safety) for s in self.obstacles.spheres]
        o = self.ocp
        return Scenario(
            name=self.name,
            waypoints=np.array(self.waypoints),
            degree=self.degree,
            traversal_duration=self.traversal_duration,
            sim_duration=self.sim_duration,
            initial_state=None if self.initial_state is None else np.array(self.initial_state),
            params=ModelParams(**self.model.model_dump()),
            weights=Weights(**self.weights.model_dump()),
            ocp=OcpConfig(N=o.horizon, dt=o.dt, u_min=o.u_min, u_max=o.u_max, obstacle_mode=o.obstacle_mode),
            solver=SolverConfig(**self.solver.model_dump()),
            obstacles=ObstacleField(spheres, self.obstacles.eta),
            plant_integrator=self.plant_integrator,
            wind=np.array(self.wind),
            arrival_radius=self.arrival_radius,
            warm_start=self.warm_start,
        )


def _key_line(text: str, loc: tuple) -> int | None:
    """Best-effort line of the innermost key named in ``loc``."""
    pos = 0
    line = None
    skip = 0
    for part in loc:
        if isinstance(part, int):
            # list item: the key we want is the (part + 1)-th repeat
            skip = part
            continue
        hit = text.find(f'"{part}"', pos)
        for _ in range(skip):
            if hit < 0:
                break
            hit = text.find(f'"{part}"', hit + 1)
        skip = 0
        if hit < 0:
            continue
        pos = hit + 1
        line = text.count("\n", 0, hit) + 1
    return line


def _format_errors(exc: ValidationError, text: str | None, source: str) -> str:
    lines = []
    for err in exc.errors():
        loc = tuple(err["loc"])
        key = ".".join(str(p) for p in loc) or "<root>"
        where = source
        if text is not None:
            n = _key_line(text, loc)
            if n is not None:
                where = f"{source}:{n}"
        lines.append(f"{where}: {key}: {err['msg']}")
    return "\n".join(lines)


def resolve_path(spec: str | os.PathLike) -> Path:
    """Existing file path, or the bundled scenario of that name."""
    p = Path(spec)
    if p.exists():
        return p
    stem = p.stem if p.suffix == ".json" else p.name
    if stem in BUNDLED:
        return Path(str(resources.files("quadnmpc") / "scenarios" / f"{stem}.json"))
    raise ScenarioFileError(f"{spec}: no such scenario file")


def apply_override(data: dict, assignment: str) -> None:
    """Apply one ``key=value`` override in place; dotted keys reach nested sections."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ScenarioFileError(f"--set {assignment!r}: expected key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node: Any = data
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            node = node[int(part)]
            continue
        node = node.setdefault(part, {})
        if not isinstance(node, (dict, list)):
            raise ScenarioFileError(f"--set {key}: {'.'.join(parts[: i + 1])} is not a section")
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def load_scenario_file(path: str | os.PathLike, overrides: list[str] = ()) -> ScenarioFile:
    path = resolve_path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ScenarioFileError(f"{path}:1: top level must be an object")
    for item in overrides:
        apply_override(data, item)
    try:
        return ScenarioFile.model_validate(data)
    except ValidationError as exc:
        raise ScenarioFileError(_format_errors(exc, text, str(path))) from exc


def load_scenario(path: str | os.PathLike, overrides: list[str] = ()) -> Scenario:
    sf = load_scenario_file(path, overrides)
    try:
        return sf.to_scenario()
    except ValueError as exc:
        raise ScenarioFileError(f"{path}: {exc}") from exc


def resolved_dict(sf: ScenarioFile) -> dict:
    """Fully populated scenario document, defaults included."""
    data = sf.model_dump()
    if data["weights"]["Q_f"] is None:
        data["weights"]["Q_f"] = [2.0 * q for q in data["weights"]["Q"]]
    if data["sim_duration"] is None:
        data["sim_duration"] = data["traversal_duration"]
    if data["initial_state"] is None:
        data["initial_state"] = sf.to_scenario().initial_state.tolist()
    return data


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def csv_header(n_obstacles: int, timing: bool = False) -> list[str]:
    cols = ["t", *STATE_NAMES, *INPUT_NAMES, *(f"ref_{n}" for n in STATE_NAMES), "deviation", "iterations"]
    if timing:
        cols.append("solve_time")
    cols.append("kkt_residual")
    cols.extend(f"margin_{i}" for i in range(n_obstacles))
    return cols


def _fmt(v: float) -> str:
    return f"{v:.{CSV_DIGITS}g}"


def trajectory_csv(log: SimLog, timing: bool = False) -> str:
    """Per-step log as CSV text, one row per record."""
    n_obs = log.margins.shape[1]
    out = [",".join(csv_header(n_obs, timing))]
    dev = log.deviation
    for k in range(len(log)):
        row = [_fmt(log.times[k])]
        row += [_fmt(v) for v in log.states[k]]
        row += [_fmt(v) for v in log.inputs[k]]
        row += [_fmt(v) for v in log.references[k]]
        row += [_fmt(dev[k]), str(int(log.iterations[k]))]
        if timing:
            row.append(_fmt(log.solve_times[k]))
        row.append(_fmt(log.kkt_residuals[k]))
        row += [_fmt(v) for v in log.margins[k]]
        out.append(",".join(row))
    return "\n".join(out) + "\n"


def metrics_json(m: Metrics) -> str:
    return json.dumps(m.to_dict(), indent=2) + "\n"


def load_metrics(path: str | os.PathLike) -> Metrics:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ScenarioFileError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ScenarioFileError(f"{path}: metrics report must be an object")
    try:
        return Metrics.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ScenarioFileError(f"{path}: {exc}") from exc
