"""Quadrotor controller model: translational dynamics with a closed-loop
first-order attitude model, plus fixed-step integrators.

State layout (10): ``[x, y, z, phi, theta, psi, vx, vy, vz, psi_dot]``.
Input layout (4): ``[T, phi_r, theta_r, psi_dot_r]``.

Every function accepts arrays with arbitrary leading batch dimensions so the
solver can evaluate all shooting nodes in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from numpy.typing import ArrayLike, NDArray

NX = 10
NU = 4

# state indices
X, Y, Z, PHI, THETA, PSI, VX, VY, VZ, PSI_DOT = range(NX)
# input indices
T, PHI_R, THETA_R, PSI_DOT_R = range(NU)

STATE_NAMES = ("x", "y", "z", "phi", "theta", "psi", "vx", "vy", "vz", "psi_dot")
INPUT_NAMES = ("T", "phi_r", "theta_r", "psi_dot_r")

StateVec = NDArray[np.float64]
ControlVec = NDArray[np.float64]


@dataclass(frozen=True)
class ModelParams:
    """Physical and closed-loop attitude parameters.

    The defaults stand in for the vehicle's unpublished identified values;
    ``m`` is chosen so that ``m * g`` sits in a 37.14-37.15 N hover band.
    """

    m: float = 3.787
    g: float = 9.81
    b_x: float = 0.1
    b_y: float = 0.1
    b_z: float = 0.2
    tau_phi: float = 0.2
    tau_theta: float = 0.2
    tau_psi: float = 0.3
    k_phi: float = 1.0
    k_theta: float = 1.0
    k_psi: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v}")
        positive = ("m", "g", "tau_phi", "tau_theta", "tau_psi", "k_phi", "k_theta", "k_psi")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("b_x", "b_y", "b_z"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def hover_thrust(self) -> float:
        return self.m * self.g

    @property
    def drag(self) -> NDArray[np.float64]:
        return np.array([self.b_x, self.b_y, self.b_z])

    def hover_input(self) -> ControlVec:
        return np.array([self.hover_thrust, 0.0, 0.0, 0.0])


def rotation_matrix(phi: ArrayLike, theta: ArrayLike, psi: ArrayLike) -> NDArray[np.float64]:
    """Body-to-inertial rotation, Z-Y-X convention: ``Rz(psi) @ Ry(theta) @ Rx(phi)``.

    Broadcasts over its arguments; the result has shape ``(..., 3, 3)``.
    """
    phi, theta, psi = np.broadcast_arrays(
        np.asarray(phi, float), np.asarray(theta, float), np.asarray(psi, float)
    )
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    R = np.empty(phi.shape + (3, 3))
    R[..., 0, 0] = cp * ct
    R[..., 0, 1] = cp * st * sf - sp * cf
    R[..., 0, 2] = cp * st * cf + sp * sf
    R[..., 1, 0] = sp * ct
    R[..., 1, 1] = sp * st * sf + cp * cf
    R[..., 1, 2] = sp * st * cf - cp * sf
    R[..., 2, 0] = -st
    R[..., 2, 1] = ct * sf
    R[..., 2, 2] = ct * cf
    return R


def _thrust_axis(phi, theta, psi):
    """Third column of the rotation matrix and its partials w.r.t. phi, theta, psi."""
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    axis = np.stack([cf * st * cp + sf * sp, cf * st * sp - sf * cp, cf * ct], axis=-1)
    d_phi = np.stack([-sf * st * cp + cf * sp, -sf * st * sp - cf * cp, -sf * ct], axis=-1)
    d_theta = np.stack([cf * ct * cp, cf * ct * sp, -cf * st], axis=-1)
    d_psi = np.stack([-cf * st * sp + sf * cp, cf * st * cp + sf * sp, np.zeros_like(cf)], axis=-1)
    return axis, d_phi, d_theta, d_psi


def dynamics(
    x: ArrayLike,
    u: ArrayLike,
    p: ModelParams,
    accel: ArrayLike | None = None,
) -> StateVec:
    """Continuous-time state derivative ``f(x, u)``.

    Drag opposes velocity (``-b * v``). ``accel`` is an optional extra
    inertial acceleration (e.g. wind) added to the velocity derivatives; the
    controller model never uses it.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    axis = _thrust_axis(x[..., PHI], x[..., THETA], x[..., PSI])[0]
    out = np.empty(shape + (NX,))
    out[..., X:Z + 1] = x[..., VX:VZ + 1]
    out[..., PHI] = p.k_phi / p.tau_phi * (u[..., PHI_R] - x[..., PHI])
    out[..., THETA] = p.k_theta / p.tau_theta * (u[..., THETA_R] - x[..., THETA])
    out[..., PSI] = x[..., PSI_DOT]
    acc = (u[..., T] / p.m)[..., None] * axis - p.drag * x[..., VX:VZ + 1]
    acc[..., 2] -= p.g
    if accel is not None:
        acc = acc + np.asarray(accel, dtype=float)
    out[..., VX:VZ + 1] = acc
    out[..., PSI_DOT] = p.k_psi / p.tau_psi * (u[..., PSI_DOT_R] - x[..., PSI_DOT])
    return out


def dynamics_jacobians(
    x: ArrayLike, u: ArrayLike, p: ModelParams
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Analytic ``df/dx`` (..., 10, 10) and ``df/du`` (..., 10, 4)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    axis, d_phi, d_theta, d_psi = _thrust_axis(x[..., PHI], x[..., THETA], x[..., PSI])
    thrust_per_mass = (u[..., T] / p.m)[..., None]

    fx = np.zeros(shape + (NX, NX))
    fx[..., X, VX] = fx[..., Y, VY] = fx[..., Z, VZ] = 1.0
    fx[..., PHI, PHI] = -p.k_phi / p.tau_phi
    fx[..., THETA, THETA] = -p.k_theta / p.tau_theta
    fx[..., PSI, PSI_DOT] = 1.0
    fx[..., VX:VZ + 1, PHI] = thrust_per_mass * d_phi
    fx[..., VX:VZ + 1, THETA] = thrust_per_mass * d_theta
    fx[..., VX:VZ + 1, PSI] = thrust_per_mass * d_psi
    fx[..., VX, VX] = -p.b_x
    fx[..., VY, VY] = -p.b_y
    fx[..., VZ, VZ] = -p.b_z
    fx[..., PSI_DOT, PSI_DOT] = -p.k_psi / p.tau_psi

    fu = np.zeros(shape + (NX, NU))
    fu[..., VX:VZ + 1, T] = np.broadcast_to(axis / p.m, shape + (3,))
    fu[..., PHI, PHI_R] = p.k_phi / p.tau_phi
    fu[..., THETA, THETA_R] = p.k_theta / p.tau_theta
    fu[..., PSI_DOT, PSI_DOT_R] = p.k_psi / p.tau_psi
    return fx, fu


def _check_dt(dt: float) -> None:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")


def step_euler(
    x: ArrayLike, u: ArrayLike, p: ModelParams, dt: float, accel: ArrayLike | None = None
) -> StateVec:
    """One forward-Euler step, ``x + f(x, u) * dt``."""
    _check_dt(dt)
    x = np.asarray(x, dtype=float)
    return x + dynamics(x, u, p, accel) * dt


def step_rk4(
    x: ArrayLike, u: ArrayLike, p: ModelParams, dt: float, accel: ArrayLike | None = None
) -> StateVec:
    """Classic fourth-order Runge-Kutta step with the input held constant."""
    _check_dt(dt)
    x = np.asarray(x, dtype=float)
    k1 = dynamics(x, u, p, accel)
    k2 = dynamics(x + 0.5 * dt * k1, u, p, accel)
    k3 = dynamics(x + 0.5 * dt * k2, u, p, accel)
    k4 = dynamics(x + dt * k3, u, p, accel)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


INTEGRATORS = {"euler": step_euler, "rk4": step_rk4}


def hover_state(position: ArrayLike = (0.0, 0.0, 0.0)) -> StateVec:
    """Level, at-rest state at ``position``."""
    x = np.zeros(NX)
    x[X:Z + 1] = position
    return x
