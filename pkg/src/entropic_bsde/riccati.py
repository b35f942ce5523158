"""Backward matrix Riccati equation of the entropy-regularized LQ problem.

Solves

    dTheta/dt = A Theta + Theta A^T + Theta H Theta - B W^{-1} B^T
                - C (I + Theta N)^{-1} Theta C^T,      Theta(T) = 0,

with ``W = R + sigma^2/2 I`` (``W = R`` for the flat prior), by classical
RK4 stepping backward from ``T``. Coefficients are frozen at the left knot of
each step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUp, NaNEncountered, SingularResolvent
from .model import CoefficientPath, LQModel, TimeGrid, control_weight, ensure_validated

COND_LIMIT = 1e12
BLOWUP_LIMIT = 1e8


def resolvent(theta: np.ndarray, N: np.ndarray, *, module: str = "riccati", op: str = "solve_riccati") -> np.ndarray:
    """``(I + Theta N)^{-1}`` with a condition-number guard."""
    M = np.eye(theta.shape[-1]) + theta @ N
    if np.linalg.cond(M) > COND_LIMIT:
        raise SingularResolvent("I + Theta N is numerically singular", module=module, op=op)
    return np.linalg.inv(M)


def riccati_rhs(theta, A, H, C, N, BWB):
    res = resolvent(theta, N)
    return A @ theta + theta @ A.T + theta @ H @ theta - BWB - C @ res @ theta @ C.T


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """``theta[k]`` is Theta at knot ``t_k``; ``theta_mid[k]`` at ``t_k + dt/2``.

    Midpoint values come from cubic Hermite interpolation with the ODE slopes,
    which keeps them fourth-order accurate for downstream RK4 solvers.
    """

    grid: TimeGrid
    theta: np.ndarray
    theta_mid: np.ndarray

    def __post_init__(self):
        for name in ("theta", "theta_mid"):
            getattr(self, name).setflags(write=False)

    @property
    def n(self) -> int:
        return self.theta.shape[-1]


def _sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def solve_riccati(m: LQModel) -> RiccatiSolution:
    m = ensure_validated(m)
    grid = m.grid
    K, dt, n = grid.n_steps, grid.dt, m.n
    A, B, C, H, N = (getattr(m, x).values for x in "ABCHN")
    W = control_weight(m)
    BWB = B @ np.linalg.solve(W, np.swapaxes(B, -1, -2))
    BWB = _sym(BWB)

    theta = np.zeros((K + 1, n, n))
    mid = np.zeros((K, n, n))
    knots = grid.knots
    for k in range(K - 1, -1, -1):
        coef = (A[k], H[k], C[k], N[k], BWB[k])
        th1 = theta[k + 1]
        k1 = riccati_rhs(th1, *coef)
        k2 = riccati_rhs(th1 - 0.5 * dt * k1, *coef)
        k3 = riccati_rhs(th1 - 0.5 * dt * k2, *coef)
        k4 = riccati_rhs(th1 - dt * k3, *coef)
        th0 = _sym(th1 - dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if not np.all(np.isfinite(th0)):
            raise NaNEncountered(f"non-finite Theta at t={knots[k]:.6g}", module="riccati", op="solve_riccati")
        if np.abs(th0).max() > BLOWUP_LIMIT:
            raise BlowUp(f"|Theta| exceeds {BLOWUP_LIMIT:g} at t={knots[k]:.6g}", module="riccati", op="solve_riccati")
        theta[k] = th0
        d0 = riccati_rhs(th0, *coef)
        mid[k] = _sym(0.5 * (th0 + th1) + dt / 8.0 * (d0 - k1))
    return RiccatiSolution(grid, theta, mid)


def refinement_error(m: LQModel, factor: int = 2) -> float:
    """Max knot difference between the solution and one on a grid ``factor`` times finer."""
    from .model import replace_model, validate_model

    coarse = solve_riccati(m)
    fine_grid = m.grid.refine(factor)
    fine_coeffs = {}
    for x in "ABCHNR":
        v = getattr(m, x).values
        fine_coeffs[x] = CoefficientPath(np.concatenate([np.repeat(v[:-1], factor, axis=0), v[-1:]]))
    fine = solve_riccati(validate_model(replace_model(m, grid=fine_grid, **fine_coeffs)))
    return float(np.abs(fine.theta[::factor] - coarse.theta).max())
