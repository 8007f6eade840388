"""Finite-horizon tracking problem over multiple-shooting nodes.

Decision variables are the node states ``x_1..x_N`` and controls
``u_0..u_{N-1}``; ``x_0`` is the measured state and stays fixed. Flattened
vectors order all states first, then all controls.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from quadnmpc import obstacle as obs_mod
from quadnmpc.model import NU, NX, ModelParams, X, Z, dynamics_jacobians, step_euler
from quadnmpc.obstacle import ObstacleField
from quadnmpc.path import ReferenceTrajectory

OBSTACLE_MODES = ("penalty", "hard-constraint")
# exact-penalty multiplier (times eta) on squared negative margins in hard-constraint mode
HARD_PENALTY_SCALE = 1e4


def _vec(values: ArrayLike, n: int, name: str) -> NDArray[np.float64]:
    v = np.array(values, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise ValueError(f"{name} must have {n} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class Weights:
    """Diagonal cost weights stored as vectors."""

    Q: NDArray[np.float64] = field(
        default_factory=lambda: np.array([10, 10, 10, 2, 2, 2, 1, 1, 1, 1], dtype=float)
    )
    R: NDArray[np.float64] = field(default_factory=lambda: np.array([0.2, 0.5, 0.5, 0.1]))
    R_delta: NDArray[np.float64] = field(default_factory=lambda: np.array([0.05, 0.1, 0.1, 0.05]))
    Q_f: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        q = _vec(self.Q, NX, "Q")
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "R", _vec(self.R, NU, "R"))
        object.__setattr__(self, "R_delta", _vec(self.R_delta, NU, "R_delta"))
        object.__setattr__(self, "Q_f", _vec(2.0 * q if self.Q_f is None else self.Q_f, NX, "Q_f"))
        for name in ("Q", "R", "R_delta", "Q_f"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} entries must be >= 0")

    def scaled(self, c: float) -> Weights:
        return Weights(c * self.Q, c * self.R, c * self.R_delta, c * self.Q_f)


@dataclass(frozen=True)
class OcpConfig:
    N: int = 30
    dt: float = 0.05
    u_min: NDArray[np.float64] = field(default_factory=lambda: np.array([5.0, -0.35, -0.35, -1.0]))
    u_max: NDArray[np.float64] = field(default_factory=lambda: np.array([60.0, 0.35, 0.35, 1.0]))
    obstacle_mode: str = "penalty"

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be an integer >= 1, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        lo, hi = _vec(self.u_min, NU, "u_min"), _vec(self.u_max, NU, "u_max")
        if np.any(lo > hi):
            raise ValueError("u_min must be <= u_max componentwise")
        object.__setattr__(self, "u_min", lo)
        object.__setattr__(self, "u_max", hi)
        if self.obstacle_mode not in OBSTACLE_MODES:
            raise ValueError(f"obstacle_mode must be one of {OBSTACLE_MODES}, got {self.obstacle_mode!r}")


@dataclass
class Decision:
    states: NDArray[np.float64]  # (N, 10): x_1..x_N
    controls: NDArray[np.float64]  # (N, 4): u_0..u_{N-1}

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        n = self.controls.shape[0]
        if self.states.shape != (n, NX) or self.controls.shape != (n, NU):
            raise ValueError(
                f"decision shapes {self.states.shape} / {self.controls.shape} are inconsistent"
            )

    @property
    def N(self) -> int:
        return self.controls.shape[0]

    def flatten(self) -> NDArray[np.float64]:
        return np.concatenate([self.states.ravel(), self.controls.ravel()])

    @classmethod
    def from_flat(cls, v: ArrayLike, N: int) -> Decision:
        v = np.asarray(v, dtype=float)
        return cls(v[: N * NX].reshape(N, NX).copy(), v[N * NX:].reshape(N, NU).copy())

    def copy(self) -> Decision:
        return Decision(self.states.copy(), self.controls.copy())


@dataclass(frozen=True)
class OcpProblem:
    x0: NDArray[np.float64]
    u_prev: NDArray[np.float64]
    refs: ReferenceTrajectory
    weights: Weights
    config: OcpConfig
    field: ObstacleField
    params: ModelParams

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", _vec(self.x0, NX, "x0"))
        object.__setattr__(self, "u_prev", _vec(self.u_prev, NU, "u_prev"))
        if len(self.refs) < self.config.N + 1:
            raise ValueError(f"reference window has {len(self.refs)} points, need {self.config.N + 1}")

    @property
    def N(self) -> int:
        return self.config.N

    @property
    def ref_states(self) -> NDArray[np.float64]:
        return self.refs.states[: self.N + 1]

    @property
    def ref_inputs(self) -> NDArray[np.float64]:
        return self.refs.inputs[: self.N]

    def with_weights(self, weights: Weights, eta: float | None = None) -> OcpProblem:
        fld = self.field if eta is None else replace(self.field, eta=eta)
        return replace(self, weights=weights, field=fld)


def stage_cost(x_k, u_k, u_prev_k, x_r, u_r, w: Weights) -> float:
    ex = np.asarray(x_k, float) - x_r
    eu = np.asarray(u_k, float) - u_r
    du = np.asarray(u_k, float) - u_prev_k
    return float(ex @ (w.Q * ex) + eu @ (w.R * eu) + du @ (w.R_delta * du))


def terminal_cost(x_N, x_rN, w: Weights) -> float:
    e = np.asarray(x_N, float) - x_rN
    return float(e @ (w.Q_f * e))


def _check_sizes(d: Decision, prob: OcpProblem) -> None:
    if d.N != prob.N:
        raise ValueError(f"decision horizon {d.N} does not match problem horizon {prob.N}")


def _all_states(d: Decision, prob: OcpProblem) -> NDArray[np.float64]:
    return np.vstack([prob.x0[None, :], d.states])


def _shifted_controls(d: Decision, prob: OcpProblem) -> NDArray[np.float64]:
    """``u_{k-1}`` for k = 0..N-1, anchored at the last applied input."""
    return np.vstack([prob.u_prev[None, :], d.controls[:-1]])


def _obstacle_value(pos: NDArray[np.float64], prob: OcpProblem) -> float:
    if not prob.field.obstacles:
        return 0.0
    return float(np.sum(_obstacle_node_values(pos, prob)))


def _obstacle_derivatives(
    pos: NDArray[np.float64], prob: OcpProblem
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gradient ``(..., 3)`` and PSD curvature ``(..., 3, 3)`` of the obstacle term."""
    fld = prob.field
    if not fld.obstacles:
        return np.zeros(pos.shape), np.zeros(pos.shape + (3,))
    if prob.config.obstacle_mode == "penalty":
        return obs_mod.total_potential_gradient(pos, fld), obs_mod.total_potential_curvature(pos, fld)
    weight = HARD_PENALTY_SCALE * fld.eta
    grad = np.zeros(pos.shape)
    hess = np.zeros(pos.shape + (3,))
    for o in fld.obstacles:
        diff = pos - o.center
        d = np.linalg.norm(diff, axis=-1)
        m = d - o.influence
        active = (m < 0) & (d >= obs_mod.EPS_D)
        n = diff / np.where(active, d, 1.0)[..., None]
        coef = np.where(active, 2.0 * weight * m, 0.0)
        grad += coef[..., None] * n
        # Gauss-Newton curvature only; the tangential term is negative inside
        hess += np.where(active, 2.0 * weight, 0.0)[..., None, None] * n[..., :, None] * n[..., None, :]
    return grad, hess


def total_objective(d: Decision, prob: OcpProblem) -> float:
    """Tracking cost plus obstacle term summed over nodes ``0..N``."""
    _check_sizes(d, prob)
    w = prob.weights
    xs = _all_states(d, prob)
    ex = xs - prob.ref_states
    eu = d.controls - prob.ref_inputs
    du = d.controls - _shifted_controls(d, prob)
    J = float(np.sum(ex[:-1] ** 2 * w.Q) + np.sum(ex[-1] ** 2 * w.Q_f))
    J += float(np.sum(eu**2 * w.R) + np.sum(du**2 * w.R_delta))
    return J + _obstacle_value(xs[:, X:Z + 1], prob)


def _obstacle_node_values(pos: NDArray[np.float64], prob: OcpProblem) -> NDArray[np.float64]:
    fld = prob.field
    vals = np.zeros(pos.shape[:-1])
    if prob.config.obstacle_mode == "penalty":
        for o in fld.obstacles:
            vals = vals + obs_mod.potential(pos, o, fld.eta)
        return vals
    weight = HARD_PENALTY_SCALE * fld.eta
    for o in fld.obstacles:
        m = np.minimum(obs_mod.margin(pos, o), 0.0)
        vals = vals + weight * m * m
    return vals


def objective_difference(new: Decision, old: Decision, prob: OcpProblem) -> float:
    """``total_objective(new) - total_objective(old)`` without cancellation.

    Squared terms are differenced as ``w * (a - b) * (a + b)`` and obstacle
    terms node by node, so tiny decreases near a solution stay resolvable.
    """
    _check_sizes(new, prob)
    _check_sizes(old, prob)
    w = prob.weights

    def quad(a, b, weight):
        return float(np.sum(weight * (a - b) * (a + b)))

    ex_n = new.states - prob.ref_states[1:]
    ex_o = old.states - prob.ref_states[1:]
    delta = quad(ex_n[:-1], ex_o[:-1], w.Q) + quad(ex_n[-1], ex_o[-1], w.Q_f)
    delta += quad(new.controls - prob.ref_inputs, old.controls - prob.ref_inputs, w.R)
    delta += quad(
        new.controls - _shifted_controls(new, prob), old.controls - _shifted_controls(old, prob), w.R_delta
    )
    if prob.field.obstacles:
        pn = _obstacle_node_values(new.states[:, X:Z + 1], prob)
        po = _obstacle_node_values(old.states[:, X:Z + 1], prob)
        delta += float(np.sum(pn - po))
    return delta


def continuity_residuals(d: Decision, prob: OcpProblem) -> NDArray[np.float64]:
    """``x_{k+1} - step_euler(x_k, u_k)`` for k = 0..N-1, shape ``(N, 10)``."""
    _check_sizes(d, prob)
    xs = _all_states(d, prob)
    return xs[1:] - step_euler(xs[:-1], d.controls, prob.params, prob.config.dt)


def linearize_step(x, u, params: ModelParams, dt: float):
    """Jacobians ``A = I + dt * df/dx`` and ``B = dt * df/du`` of the Euler step."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    fx, fu = dynamics_jacobians(x, u, params)
    return np.eye(NX) + dt * fx, dt * fu


def objective_gradient_parts(
    d: Decision, prob: OcpProblem
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gradient split as ``(d/dx_1..x_N, d/du_0..u_{N-1})`` with shapes (N, 10), (N, 4)."""
    _check_sizes(d, prob)
    w = prob.weights
    xs = _all_states(d, prob)
    ex = xs[1:] - prob.ref_states[1:]
    gx = 2.0 * ex * w.Q
    gx[-1] = 2.0 * ex[-1] * w.Q_f
    gx[:, X:Z + 1] += _obstacle_derivatives(d.states[:, X:Z + 1], prob)[0]
    du = d.controls - _shifted_controls(d, prob)
    gu = 2.0 * (d.controls - prob.ref_inputs) * w.R + 2.0 * du * w.R_delta
    gu[:-1] -= 2.0 * du[1:] * w.R_delta
    return gx, gu


def objective_gradient(d: Decision, prob: OcpProblem) -> NDArray[np.float64]:
    gx, gu = objective_gradient_parts(d, prob)
    return np.concatenate([gx.ravel(), gu.ravel()])


def state_hessian_blocks(d: Decision, prob: OcpProblem) -> NDArray[np.float64]:
    """Gauss-Newton Hessian blocks for ``x_1..x_N``, shape ``(N, 10, 10)``.

    Exact for the weighted-norm terms; the obstacle curvature is the
    positive-semidefinite part only.
    """
    w = prob.weights
    H = np.zeros((prob.N, NX, NX))
    idx = np.arange(NX)
    H[:, idx, idx] = 2.0 * w.Q
    H[-1, idx, idx] = 2.0 * w.Q_f
    H[:, X:Z + 1, X:Z + 1] += _obstacle_derivatives(d.states[:, X:Z + 1], prob)[1]
    return H


def control_hessian(prob: OcpProblem) -> NDArray[np.float64]:
    """Exact Hessian of the input and input-rate terms, shape ``(4N, 4N)``."""
    N, w = prob.N, prob.weights
    rd = 2.0 * w.R_delta
    diag = np.tile(2.0 * w.R + rd, N)
    diag[: (N - 1) * NU] += np.tile(rd, N - 1)
    H = np.diag(diag)
    if N > 1:
        off = np.tile(-rd, N - 1)
        i = np.arange((N - 1) * NU)
        H[i, i + NU] = off
        H[i + NU, i] = off
    return H


def node_positions(d: Decision, prob: OcpProblem) -> NDArray[np.float64]:
    """Positions of nodes ``0..N``."""
    return _all_states(d, prob)[:, X:Z + 1]
