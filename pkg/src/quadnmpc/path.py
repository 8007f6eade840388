"""Clamped B-spline reference paths and time-sampled reference trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from quadnmpc.model import NU, NX, PSI_DOT, VX, VZ, T, X, Z


@dataclass(frozen=True)
class BSplinePath:
    degree: int
    control_points: NDArray[np.float64]
    knots: NDArray[np.float64]

    def __post_init__(self) -> None:
        cp = np.array(self.control_points, dtype=float)
        kn = np.array(self.knots, dtype=float)
        p = int(self.degree)
        if p < 1:
            raise ValueError(f"degree must be >= 1, got {p}")
        if cp.ndim != 2 or cp.shape[1] != 3:
            raise ValueError(f"control_points must have shape (n, 3), got {cp.shape}")
        if cp.shape[0] < p + 1:
            raise ValueError(f"need at least {p + 1} control points for degree {p}, got {cp.shape[0]}")
        if kn.shape != (cp.shape[0] + p + 1,):
            raise ValueError(f"expected {cp.shape[0] + p + 1} knots, got {kn.shape[0] if kn.ndim else 0}")
        if np.any(np.diff(kn) < 0):
            raise ValueError("knot vector must be non-decreasing")
        if np.any(kn[: p + 1] != kn[0]) or np.any(kn[-(p + 1):] != kn[-1]):
            raise ValueError("knot vector must be clamped (end multiplicity degree + 1)")
        if not kn[-1] > kn[0]:
            raise ValueError("knot range must be non-empty")
        cp.setflags(write=False)
        kn.setflags(write=False)
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "knots", kn)

    @property
    def t_min(self) -> float:
        return float(self.knots[0])

    @property
    def t_max(self) -> float:
        return float(self.knots[-1])


def basis(i: int, p: int, t: float, knots: ArrayLike) -> float:
    """Cox-de Boor recursion for ``N_{i,p}(t)``; 0/0 terms count as zero.

    Degree-0 functions are indicators of ``[t_i, t_{i+1})``, except that the
    last non-empty span is closed on the right so clamped curves reach their
    final control point at ``t = knots[-1]``.
    """
    kn = np.asarray(knots, dtype=float)
    if i < 0 or p < 0 or i + p + 1 >= len(kn):
        raise ValueError(f"basis index i={i} with degree p={p} out of range for {len(kn)} knots")
    return _basis(i, p, float(t), kn)


def _basis(i: int, p: int, t: float, kn: NDArray[np.float64]) -> float:
    if p == 0:
        if kn[i] <= t < kn[i + 1]:
            return 1.0
        # closed right end on the last non-empty span
        if t == kn[-1] and kn[i] < kn[i + 1] == kn[-1]:
            return 1.0
        return 0.0
    left = 0.0
    den = kn[i + p] - kn[i]
    if den > 0:
        left = (t - kn[i]) / den * _basis(i, p - 1, t, kn)
    right = 0.0
    den = kn[i + p + 1] - kn[i + 1]
    if den > 0:
        right = (kn[i + p + 1] - t) / den * _basis(i + 1, p - 1, t, kn)
    return left + right


def basis_functions(t: ArrayLike, p: int, knots: ArrayLike) -> NDArray[np.float64]:
    """All ``N_{i,p}(t)`` for a batch of parameters, shape ``(len(t), n_ctrl)``.

    Same recursion as :func:`basis`, evaluated bottom-up over degree.
    """
    kn = np.asarray(knots, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    m = len(kn) - 1
    N = ((kn[:-1] <= t[:, None]) & (t[:, None] < kn[1:])).astype(float)
    last = np.nonzero(kn[:-1] < kn[1:])[0][-1]
    N[t == kn[-1], last] = 1.0
    for q in range(1, p + 1):
        n_fun = m - q
        lo, hi = kn[:n_fun], kn[q:q + n_fun]
        den_l = hi - lo
        lo2, hi2 = kn[1:n_fun + 1], kn[q + 1:q + 1 + n_fun]
        den_r = hi2 - lo2
        with np.errstate(divide="ignore", invalid="ignore"):
            wl = np.where(den_l > 0, (t[:, None] - lo) / np.where(den_l > 0, den_l, 1.0), 0.0)
            wr = np.where(den_r > 0, (hi2 - t[:, None]) / np.where(den_r > 0, den_r, 1.0), 0.0)
        N = wl * N[:, :n_fun] + wr * N[:, 1:n_fun + 1]
    return N


def make_clamped_knots(n_ctrl: int, p: int) -> NDArray[np.float64]:
    """Clamped knot vector on [0, 1] with uniformly spaced interior knots."""
    if p < 1:
        raise ValueError(f"degree must be >= 1, got {p}")
    if n_ctrl <= p:
        raise ValueError(f"need n_ctrl > degree, got n_ctrl={n_ctrl}, p={p}")
    inner = np.linspace(0.0, 1.0, n_ctrl - p + 1)
    return np.concatenate([np.zeros(p), inner, np.ones(p)])


def eval(path: BSplinePath, t: ArrayLike) -> NDArray[np.float64]:  # noqa: A001
    """Curve point(s) at parameter ``t``; shape ``(3,)`` for scalar input."""
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < path.t_min) or np.any(ts > path.t_max) or not np.all(np.isfinite(ts)):
        raise ValueError(f"parameter outside knot range [{path.t_min}, {path.t_max}]")
    pts = basis_functions(ts, path.degree, path.knots) @ path.control_points
    # exact endpoint interpolation
    pts[ts == path.t_min] = path.control_points[0]
    pts[ts == path.t_max] = path.control_points[-1]
    return pts[0] if scalar else pts


def build_from_waypoints(waypoints: ArrayLike, p: int = 3) -> BSplinePath:
    """Approximating spline: waypoints become control points on clamped uniform knots."""
    wp = np.asarray(waypoints, dtype=float)
    if wp.ndim != 2 or wp.shape[1] != 3:
        raise ValueError(f"waypoints must have shape (n, 3), got {wp.shape}")
    if wp.shape[0] < p + 1:
        raise ValueError(f"degree {p} needs at least {p + 1} waypoints, got {wp.shape[0]}")
    return BSplinePath(p, wp, make_clamped_knots(wp.shape[0], p))


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Time-indexed state and input references at spacing ``dt``."""

    dt: float
    states: NDArray[np.float64]
    inputs: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.states.ndim != 2 or self.states.shape[1] != NX:
            raise ValueError(f"states must have shape (K, {NX})")
        if self.inputs.shape != (self.states.shape[0], NU):
            raise ValueError(f"inputs must have shape ({self.states.shape[0]}, {NU})")
        if self.states.shape[0] < 2:
            raise ValueError("a reference trajectory needs at least 2 points")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def positions(self) -> NDArray[np.float64]:
        return self.states[:, X:Z + 1]

    def window(self, start: int, length: int) -> ReferenceTrajectory:
        """``length`` points from index ``start``.

        Indices past the end hold the final position at rest (zero velocity
        and yaw rate) so the tail of the horizon asks for a terminal hover.
        """
        idx = np.arange(start, start + length)
        past = idx >= len(self)
        idx = np.minimum(idx, len(self) - 1)
        states = self.states[idx].copy()
        states[past, VX:VZ + 1] = 0.0
        states[past, PSI_DOT] = 0.0
        return ReferenceTrajectory(self.dt, states, self.inputs[idx].copy())


def sample_reference(
    path: BSplinePath, duration: float, dt: float, hover_thrust: float
) -> ReferenceTrajectory:
    """Sweep the spline parameter linearly over ``duration``.

    Velocities are forward differences of the sampled positions (the last one
    repeated); attitudes and yaw rate are zero; every input reference is
    ``(hover_thrust, 0, 0, 0)``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if not duration >= dt:
        raise ValueError(f"duration ({duration}) must be >= dt ({dt})")
    n = int(round(duration / dt))
    times = np.arange(n + 1) * dt
    frac = np.minimum(times / duration, 1.0)
    params = path.t_min + frac * (path.t_max - path.t_min)
    params[-1] = min(params[-1], path.t_max)
    pos = eval(path, params)
    vel = np.empty_like(pos)
    vel[:-1] = (pos[1:] - pos[:-1]) / dt
    vel[-1] = vel[-2]
    states = np.zeros((n + 1, NX))
    states[:, X:Z + 1] = pos
    states[:, VX:VZ + 1] = vel
    inputs = np.zeros((n + 1, NU))
    inputs[:, T] = hover_thrust
    return ReferenceTrajectory(dt, states, inputs)
