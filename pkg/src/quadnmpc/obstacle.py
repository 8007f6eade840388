"""Sphere obstacles: clearance margins and the repulsive-potential penalty.

Position arguments broadcast over leading dimensions, shape ``(..., 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

# distance floor before inversion in the potential
EPS_D = 1e-6


@dataclass(frozen=True)
class Obstacle:
    center: NDArray[np.float64]
    radius: float
    safety: float = 0.0

    def __post_init__(self) -> None:
        c = np.array(self.center, dtype=float)
        if c.shape != (3,) or not np.all(np.isfinite(c)):
            raise ValueError(f"center must be a finite 3-vector, got {self.center!r}")
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if not self.safety >= 0:
            raise ValueError(f"safety must be >= 0, got {self.safety}")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    @property
    def influence(self) -> float:
        """Radius of the safety sphere, ``radius + safety``."""
        return self.radius + self.safety


@dataclass(frozen=True)
class ObstacleField:
    obstacles: tuple[Obstacle, ...] = field(default_factory=tuple)
    eta: float = 10.0

    def __post_init__(self) -> None:
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def __len__(self) -> int:
        return len(self.obstacles)

    def arrays(self) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
        """Stacked centers ``(M, 3)``, radii ``(M,)`` and influence radii ``(M,)``."""
        if not self.obstacles:
            return np.zeros((0, 3)), np.zeros(0), np.zeros(0)
        centers = np.stack([o.center for o in self.obstacles])
        radii = np.array([o.radius for o in self.obstacles])
        influence = np.array([o.influence for o in self.obstacles])
        return centers, radii, influence


def distance(pos: ArrayLike, obs: Obstacle) -> NDArray[np.float64] | float:
    return np.linalg.norm(np.asarray(pos, dtype=float) - obs.center, axis=-1)


def margin(pos: ArrayLike, obs: Obstacle) -> NDArray[np.float64] | float:
    """Signed clearance to the safety sphere; nonnegative iff the hard constraint holds."""
    return distance(pos, obs) - obs.influence


def potential(pos: ArrayLike, obs: Obstacle, eta: float) -> NDArray[np.float64] | float:
    """Repulsive penalty ``0.5 * eta * (1/d - 1/(r + d_s))**2`` inside the safety sphere, else 0."""
    d = distance(pos, obs)
    gap = 1.0 / np.maximum(d, EPS_D) - 1.0 / obs.influence
    return np.where(d < obs.influence, 0.5 * eta * gap * gap, 0.0)


def potential_gradient(pos: ArrayLike, obs: Obstacle, eta: float) -> NDArray[np.float64]:
    pos = np.asarray(pos, dtype=float)
    diff = pos - obs.center
    d = np.linalg.norm(diff, axis=-1)
    inside = (d < obs.influence) & (d >= EPS_D)
    ds = np.where(inside, d, 1.0)
    coef = np.where(inside, -eta * (1.0 / ds - 1.0 / obs.influence) / ds**3, 0.0)
    return coef[..., None] * diff


def potential_curvature(pos: ArrayLike, obs: Obstacle, eta: float) -> NDArray[np.float64]:
    """Positive-semidefinite part of the potential Hessian, shape ``(..., 3, 3)``.

    The exact Hessian has eigenvalue ``eta * (1/d**4 + 2*s/d**3)`` along the
    radial direction and ``-eta * s / d**3`` tangentially (``s = 1/d - 1/(r+d_s)``);
    only the radial part is kept.
    """
    pos = np.asarray(pos, dtype=float)
    diff = pos - obs.center
    d = np.linalg.norm(diff, axis=-1)
    inside = (d < obs.influence) & (d >= EPS_D)
    ds = np.where(inside, d, 1.0)
    s = 1.0 / ds - 1.0 / obs.influence
    radial = np.where(inside, eta * (1.0 / ds**4 + 2.0 * s / ds**3), 0.0)
    n = diff / ds[..., None]
    return radial[..., None, None] * n[..., :, None] * n[..., None, :]


def total_potential(pos: ArrayLike, fld: ObstacleField) -> NDArray[np.float64] | float:
    pos = np.asarray(pos, dtype=float)
    total = np.zeros(pos.shape[:-1])
    for obs in fld.obstacles:
        total = total + potential(pos, obs, fld.eta)
    return total if total.ndim else float(total)


def total_potential_gradient(pos: ArrayLike, fld: ObstacleField) -> NDArray[np.float64]:
    pos = np.asarray(pos, dtype=float)
    grad = np.zeros(pos.shape)
    for obs in fld.obstacles:
        grad += potential_gradient(pos, obs, fld.eta)
    return grad


def total_potential_curvature(pos: ArrayLike, fld: ObstacleField) -> NDArray[np.float64]:
    pos = np.asarray(pos, dtype=float)
    hess = np.zeros(pos.shape + (3,))
    for obs in fld.obstacles:
        hess += potential_curvature(pos, obs, fld.eta)
    return hess
