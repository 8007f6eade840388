"""Gauss-Newton SQP for the multiple-shooting tracking problem.

Each iteration linearizes the continuity constraints, condenses the state
steps away so the QP lives in the controls only, solves that box-constrained
QP, and takes a backtracking step on an l1 merit function.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from quadnmpc.model import NU, NX, step_euler
from quadnmpc.ocp import (
    Decision,
    OcpProblem,
    continuity_residuals,
    control_hessian,
    linearize_step,
    objective_difference,
    objective_gradient_parts,
    state_hessian_blocks,
    total_objective,
)

CONVERGED = "converged"
MAX_ITERATIONS = "max-iterations"
LINE_SEARCH_FAILURE = "line-search-failure"

QP_TOLERANCE = 1e-8
ARMIJO = 1e-4
ROUNDOFF = 16 * np.finfo(float).eps


class SolverError(RuntimeError):
    """Raised when the initial guess has a non-finite objective."""


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50
    kkt_tolerance: float = 1e-6
    line_search_shrink: float = 0.5
    line_search_min_step: float = 1e-8
    constraint_tolerance: float = 1e-8

    def __post_init__(self) -> None:
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError(f"max_iterations must be an integer >= 1, got {self.max_iterations}")
        object.__setattr__(self, "max_iterations", int(self.max_iterations))
        if not 0 < self.line_search_shrink < 1:
            raise ValueError(f"line_search_shrink must lie in (0, 1), got {self.line_search_shrink}")
        for name in ("kkt_tolerance", "line_search_min_step", "constraint_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass
class SolveResult:
    decision: Decision
    iterations: int
    kkt_residual: float
    continuity_residual_inf: float
    objective: float
    wall_time: float
    status: str
    # (merit before, merit after) for every accepted step, same penalty parameter
    merit_history: list[tuple[float, float]] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def rollout(x0: NDArray[np.float64], controls: NDArray[np.float64], prob: OcpProblem) -> NDArray[np.float64]:
    """Euler rollout of ``controls`` from ``x0``; returns ``x_1..x_N``."""
    states = np.empty((controls.shape[0], NX))
    x = x0
    for k, u in enumerate(controls):
        x = step_euler(x, u, prob.params, prob.config.dt)
        states[k] = x
    return states


def cold_start(prob: OcpProblem) -> Decision:
    """Reference inputs for every control, states rolled out from ``x0``."""
    controls = np.clip(prob.ref_inputs, prob.config.u_min, prob.config.u_max)
    return Decision(rollout(prob.x0, controls, prob), controls.copy())


def shift_warm_start(prev: Decision, prob: OcpProblem) -> Decision:
    """Drop the applied control, repeat the last one, and re-roll the states."""
    if prev.N != prob.N:
        raise ValueError(f"previous horizon {prev.N} does not match problem horizon {prob.N}")
    controls = np.vstack([prev.controls[1:], prev.controls[-1:]])
    controls = np.clip(controls, prob.config.u_min, prob.config.u_max)
    return Decision(rollout(prob.x0, controls, prob), controls)


def _multipliers(A: NDArray[np.float64], gx: NDArray[np.float64]) -> NDArray[np.float64]:
    """Continuity multipliers from stationarity in the states.

    With ``L = J + sum_k lam_k . (x_{k+1} - F(x_k, u_k))``:
    ``lam_{N-1} = -gx_N`` and ``lam_{k-1} = A_k^T lam_k - gx_k``.
    """
    N = gx.shape[0]
    lam = np.empty_like(gx)
    lam[-1] = -gx[-1]
    for k in range(N - 2, -1, -1):
        lam[k] = A[k + 1].T @ lam[k + 1] - gx[k]
    return lam


def _projected_gradient(controls, grad_u, prob: OcpProblem) -> float:
    cfg = prob.config
    step = np.clip(controls - grad_u, cfg.u_min, cfg.u_max) - controls
    return float(np.max(np.abs(step))) if step.size else 0.0


def kkt_residual(
    d: Decision, prob: OcpProblem, multipliers: NDArray[np.float64] | None = None
) -> float:
    """Projected Lagrangian gradient in the controls plus continuity violation (both inf-norms).

    Without explicit ``multipliers`` the adjoint estimate at ``d`` is used,
    which makes the state part of the Lagrangian gradient vanish exactly.
    """
    xs = np.vstack([prob.x0, d.states])
    A, B = linearize_step(xs[:-1], d.controls, prob.params, prob.config.dt)
    gx, gu = objective_gradient_parts(d, prob)
    lam = _multipliers(A, gx) if multipliers is None else np.asarray(multipliers, dtype=float)
    grad_u = gu - np.einsum("kij,ki->kj", B, lam)
    c = continuity_residuals(d, prob)
    return _projected_gradient(d.controls, grad_u, prob) + float(np.max(np.abs(c)))


def condense(A, B, c):
    """Express linearized state steps as ``dx = G @ du + g0``.

    ``dx_{k+1} = A_k dx_k + B_k du_k - c_k`` with ``dx_0 = 0``; rows of ``G``
    follow ``x_1..x_N``, columns ``u_0..u_{N-1}``.
    """
    N = B.shape[0]
    G = np.zeros((N, NX, N * NU))
    g0 = np.zeros((N, NX))
    G[0, :, :NU] = B[0]
    g0[0] = -c[0]
    for k in range(1, N):
        width = k * NU
        G[k, :, :width] = A[k] @ G[k - 1, :, :width]
        G[k, :, width:width + NU] = B[k]
        g0[k] = A[k] @ g0[k - 1] - c[k]
    return G, g0


def solve_box_qp(
    H: NDArray[np.float64],
    q: NDArray[np.float64],
    lo: NDArray[np.float64],
    hi: NDArray[np.float64],
    tol: float = QP_TOLERANCE,
    max_iter: int = 200,
) -> NDArray[np.float64]:
    """Minimize ``0.5 z'Hz + q'z`` subject to ``lo <= z <= hi``; ``H`` positive definite.

    Projected Newton: bounds whose gradient points outward are held fixed,
    a Newton step is taken on the rest, and the step is projected back with
    an Armijo backtrack; a plain projected-gradient step is the fallback.
    Stops when the projected gradient inf-norm drops to ``tol``.
    """
    def f(z):
        return 0.5 * z @ (H @ z) + q @ z

    lipschitz = float(np.max(np.sum(np.abs(H), axis=1)))
    try:
        z = np.clip(np.linalg.solve(H, -q), lo, hi)
    except np.linalg.LinAlgError:
        z = np.clip(np.zeros_like(q), lo, hi)
    for _ in range(max_iter):
        g = H @ z + q
        pg = np.clip(z - g, lo, hi) - z
        pg_norm = float(np.max(np.abs(pg))) if pg.size else 0.0
        if pg_norm <= tol:
            break
        band = min(pg_norm, 1e-6)
        # variable order fixes the binding set deterministically
        binding = ((z <= lo + band) & (g > 0)) | ((z >= hi - band) & (g < 0))
        free = ~binding
        d = np.zeros_like(z)
        if np.any(free):
            Hf = H[np.ix_(free, free)]
            d[free] = np.linalg.solve(Hf, -g[free])
        f0 = f(z)
        t = 1.0
        moved = False
        while t > 1e-10:
            z_new = np.clip(z + t * d, lo, hi)
            if f(z_new) <= f0 + ARMIJO * g @ (z_new - z) and np.any(z_new != z):
                moved = True
                break
            t *= 0.5
        if not moved:
            z_new = np.clip(z - g / lipschitz, lo, hi)
            if np.array_equal(z_new, z):
                break
        z = z_new
    return z


class _Evaluator:
    """Caches the quantities of one iterate."""

    def __init__(self, prob: OcpProblem, d: Decision) -> None:
        self.d = d
        self.J = total_objective(d, prob)
        self.c = continuity_residuals(d, prob)
        self.c_inf = float(np.max(np.abs(self.c)))
        # entries below their own evaluation roundoff count as zero in the merit
        xs = np.vstack([prob.x0, d.states])
        noise = ROUNDOFF * (np.abs(xs[1:]) + np.abs(xs[:-1]) + 1.0)
        self.c_l1 = float(np.sum(np.maximum(np.abs(self.c) - noise, 0.0)))

    def merit(self, mu: float) -> float:
        return self.J + mu * self.c_l1


def solve(prob: OcpProblem, init: Decision, cfg: SolverConfig | None = None) -> SolveResult:
    """Run SQP iterations from ``init`` until the KKT residual meets tolerance.

    The returned decision is the last accepted iterate, which has the lowest
    merit value seen. Line-search failure and the iteration cap are reported
    through ``status``.
    """
    cfg = cfg or SolverConfig()
    t_start = time.perf_counter()
    if init.N != prob.N:
        raise ValueError(f"initial guess horizon {init.N} does not match problem horizon {prob.N}")
    N = prob.N
    ocfg = prob.config
    d = Decision(init.states.copy(), np.clip(init.controls, ocfg.u_min, ocfg.u_max))
    cur = _Evaluator(prob, d)
    if not np.isfinite(cur.J) or not np.all(np.isfinite(cur.c)):
        raise SolverError("objective or continuity residual is not finite at the initial guess")

    Huu = control_hessian(prob)
    mu = 0.0
    iterations = 0
    history: list[tuple[float, float]] = []
    status = MAX_ITERATIONS
    kkt = np.inf

    while True:
        xs = np.vstack([prob.x0, d.states])
        A, B = linearize_step(xs[:-1], d.controls, prob.params, ocfg.dt)
        gx, gu = objective_gradient_parts(d, prob)
        lam = _multipliers(A, gx)
        grad_u = gu - np.einsum("kij,ki->kj", B, lam)
        kkt = _projected_gradient(d.controls, grad_u, prob) + cur.c_inf
        if kkt <= cfg.kkt_tolerance and cur.c_inf <= cfg.constraint_tolerance:
            status = CONVERGED
            break
        if iterations >= cfg.max_iterations:
            status = MAX_ITERATIONS
            break

        Hx = state_hessian_blocks(d, prob)
        G, g0 = condense(A, B, cur.c)
        HG = np.einsum("kij,kjm->kim", Hx, G)
        Gm = G.reshape(N * NX, N * NU)
        H_red = Gm.T @ HG.reshape(N * NX, N * NU) + Huu
        H_red = 0.5 * (H_red + H_red.T) + 1e-10 * np.eye(N * NU)
        q_red = Gm.T @ (np.einsum("kij,kj->ki", Hx, g0) + gx).ravel() + gu.ravel()
        lo = (ocfg.u_min - d.controls).ravel()
        hi = (ocfg.u_max - d.controls).ravel()
        du = solve_box_qp(H_red, q_red, lo, hi)
        dx = (Gm @ du + g0.ravel()).reshape(N, NX)
        du = du.reshape(N, NU)

        lam_qp = _multipliers(A, gx + np.einsum("kij,kj->ki", Hx, dx))
        mu = max(mu, 10.0 * float(np.max(np.abs(lam_qp))))
        phi0 = cur.merit(mu)
        slope = float(np.sum(gx * dx) + np.sum(gu * du)) - mu * cur.c_l1

        alpha = 1.0
        accepted = None
        while alpha >= cfg.line_search_min_step:
            trial = Decision(
                d.states + alpha * dx,
                np.clip(d.controls + alpha * du, ocfg.u_min, ocfg.u_max),
            )
            ev = _Evaluator(prob, trial)
            change = objective_difference(trial, d, prob) + mu * (ev.c_l1 - cur.c_l1)
            if np.isfinite(change) and change <= ARMIJO * alpha * min(slope, 0.0):
                accepted = ev
                break
            alpha *= cfg.line_search_shrink
        if accepted is None:
            status = LINE_SEARCH_FAILURE
            break
        history.append((phi0, phi0 + change))
        d, cur = accepted.d, accepted
        iterations += 1

    return SolveResult(
        decision=d,
        iterations=iterations,
        kkt_residual=float(kkt),
        continuity_residual_inf=cur.c_inf,
        objective=cur.J,
        wall_time=time.perf_counter() - t_start,
        status=status,
        merit_history=history,
    )
