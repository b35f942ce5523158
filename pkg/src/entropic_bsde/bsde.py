"""Decoupling BSDE for (phi, eta) and a regression solver for linear BSDEs.

The decoupling BSDE

    d phi = ((A + Theta H) phi + C (I + Theta N)^{-1} eta) dt + eta dW,
    phi_T = xi,

has deterministic coefficients, so for ``xi = c + q W_T`` the ansatz
``phi_t = alpha_t + beta_t W_t`` (with ``eta = beta``) reduces it to two
backward ODEs, solved here by RK4. The regression solver is an independent
Monte-Carlo route used to cross-check the ansatz.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermevander

from .brownian import BrownianPaths, path_mean
from .errors import GridMismatch, IllConditionedRegression
from .model import AffineInBrownian, Deterministic, LQModel, TimeGrid, ensure_validated
from .riccati import RiccatiSolution, resolvent

REGRESSION_COND_LIMIT = 1e10


@dataclass(frozen=True, eq=False)
class PhiSolution:
    """``phi_t = alpha_t + beta_t W_t`` and ``eta_t = beta_t`` on the grid."""

    grid: TimeGrid
    phi_alpha: np.ndarray
    phi_beta: np.ndarray

    def __post_init__(self):
        self.phi_alpha.setflags(write=False)
        self.phi_beta.setflags(write=False)

    def phi(self, W: np.ndarray) -> np.ndarray:
        """Path values ``(n_paths, K+1, n)`` given Brownian paths ``W`` of shape ``(n_paths, K+1)``."""
        return self.phi_alpha[None] + W[..., None] * self.phi_beta[None]

    @property
    def eta(self) -> np.ndarray:
        return self.phi_beta


@dataclass(frozen=True, eq=False)
class LinearDriver:
    """Driver ``g(t_k, y, z) = a[k] y + c[k] z + b[k]`` of ``dY = g dt + Z dW``."""

    a: np.ndarray
    c: np.ndarray
    b: np.ndarray

    def __call__(self, k: int, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        return y @ self.a[k].T + z @ self.c[k].T + self.b[k]


def decoupling_coefficients(m: LQModel, th: RiccatiSolution, which: str = "knots"):
    """``(A + Theta H, C (I + Theta N)^{-1})`` at knots or at step midpoints.

    Model coefficients are taken at the left knot of each step.
    """
    A, C, H, N = (getattr(m, x).values for x in "ACHN")
    if which == "knots":
        theta, idx = th.theta, np.arange(th.theta.shape[0])
    else:
        theta, idx = th.theta_mid, np.arange(th.theta_mid.shape[0])
    drift = A[idx] + theta @ H[idx]
    res = np.stack([resolvent(theta[i], N[k], module="bsde", op="solve_phi") for i, k in enumerate(idx)])
    return drift, C[idx] @ res


def phi_driver(m: LQModel, th: RiccatiSolution) -> LinearDriver:
    drift, coupling = decoupling_coefficients(m, th)
    return LinearDriver(drift, coupling, np.zeros((drift.shape[0], drift.shape[1])))


def solve_phi(m: LQModel, th: RiccatiSolution) -> PhiSolution:
    m = ensure_validated(m)
    if th.grid != m.grid:
        raise GridMismatch("Riccati solution and model use different time grids")
    term = m.terminal
    if not isinstance(term, (Deterministic, AffineInBrownian)):
        raise TypeError(f"unsupported terminal condition {term!r}")
    K, dt, n = m.grid.n_steps, m.grid.dt, m.n
    Mk, Dk = decoupling_coefficients(m, th, "knots")
    Mm, Dm = decoupling_coefficients(m, th, "mid")
    # At the right end of step k the coefficients are frozen at knot k but
    # Theta is evaluated at t_{k+1}.
    A, C, H, N = (getattr(m, x).values for x in "ACHN")

    def rhs(M, D, al, be):
        return M @ al + D @ be, M @ be

    alpha = np.zeros((K + 1, n))
    beta = np.zeros((K + 1, n))
    alpha[K] = term.c
    beta[K] = term.q
    for k in range(K - 1, -1, -1):
        th1 = th.theta[k + 1]
        M1 = A[k] + th1 @ H[k]
        D1 = C[k] @ resolvent(th1, N[k], module="bsde", op="solve_phi")
        M0 = A[k] + th.theta[k] @ H[k]
        D0 = Dk[k]
        a1, b1 = alpha[k + 1], beta[k + 1]
        ka1, kb1 = rhs(M1, D1, a1, b1)
        ka2, kb2 = rhs(Mm[k], Dm[k], a1 - 0.5 * dt * ka1, b1 - 0.5 * dt * kb1)
        ka3, kb3 = rhs(Mm[k], Dm[k], a1 - 0.5 * dt * ka2, b1 - 0.5 * dt * kb2)
        ka4, kb4 = rhs(M0, D0, a1 - dt * ka3, b1 - dt * kb3)
        alpha[k] = a1 - dt / 6.0 * (ka1 + 2 * ka2 + 2 * ka3 + ka4)
        beta[k] = b1 - dt / 6.0 * (kb1 + 2 * kb2 + 2 * kb3 + kb4)
    if not np.any(term.q):
        beta[:] = 0.0
    return PhiSolution(m.grid, alpha, beta)


# ---------------------------------------------------------------------------
# regression solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegressionSolution:
    """Sampled solution of a linear BSDE by least-squares Monte Carlo.

    ``Y`` has shape ``(n_paths, K+1, n)``, ``Z`` has ``(n_paths, K, n)``
    (``Z[:, k]`` lives on step ``[t_k, t_{k+1}]``), ``residuals[k]`` is the RMS
    misfit of the ``Y`` regression at step ``k``.
    """

    grid: TimeGrid
    brownian: BrownianPaths
    Y: np.ndarray
    Z: np.ndarray
    residuals: np.ndarray
    degree: int

    def mean_Y(self) -> np.ndarray:
        return path_mean(self.Y)


def _basis(w: np.ndarray, t: float, degree: int) -> np.ndarray:
    if t <= 0.0:
        return np.ones((w.shape[0], 1))
    return hermevander(w / np.sqrt(t), degree)


def _project(Phi: np.ndarray, target: np.ndarray, k: int) -> np.ndarray:
    gram = Phi.T @ Phi
    cond = np.linalg.cond(gram)
    if not cond <= REGRESSION_COND_LIMIT:
        raise IllConditionedRegression(
            f"normal matrix condition {cond:.3e} at step {k}", module="bsde", op="solve_linear_bsde_regression"
        )
    coef = np.linalg.solve(gram, Phi.T @ target)
    return Phi @ coef


def solve_linear_bsde_regression(
    m: LQModel,
    driver: LinearDriver,
    terminal: Callable[[np.ndarray], np.ndarray] | None = None,
    n_paths: int = 10_000,
    degree: int = 3,
    seed: int = 0,
    *,
    brownian: BrownianPaths | None = None,
) -> RegressionSolution:
    """Backward scheme for ``dY = g(t, Y, Z) dt + Z dW`` with conditional
    expectations replaced by regression on Hermite polynomials of ``W_t``.

    ``Z_k = E[(Y_{k+1} - E[Y_{k+1} | W_k]) dW_k | W_k] / dt`` and the ``Y`` update is trapezoidal
    in the linear ``a y`` part of the driver.
    """
    if n_paths < 1000:
        raise ValueError("regression solver needs at least 1000 paths")
    if degree < 1:
        raise ValueError("basis degree must be at least 1")
    grid = m.grid
    if brownian is None:
        brownian = BrownianPaths.generate(grid, n_paths, seed)
    elif brownian.grid != grid:
        raise GridMismatch("Brownian paths and model use different grids")
    terminal = terminal or m.terminal.sample
    K, dt = grid.n_steps, grid.dt
    W = brownian.W
    t = grid.knots
    yT = np.asarray(terminal(W[:, -1]), dtype=float)
    if yT.ndim == 1:
        yT = yT[:, None]
    P, n = yT.shape
    Y = np.empty((P, K + 1, n))
    Z = np.empty((P, K, n))
    resid = np.empty(K)
    Y[:, K] = yT
    I = np.eye(n)
    for k in range(K - 1, -1, -1):
        Phi = _basis(W[:, k], t[k], degree)
        y1 = Y[:, k + 1]
        # centring Y_{k+1} first removes most of the variance of the Z estimate
        centred = y1 - _project(Phi, y1, k)
        z = _project(Phi, centred * (brownian.dW[:, k : k + 1] / dt), k)
        a = driver.a[k]
        target = y1 @ (I - 0.5 * dt * a).T - dt * (z @ driver.c[k].T + driver.b[k])
        fitted = _project(Phi, target, k)
        Y[:, k] = np.linalg.solve(I + 0.5 * dt * a, fitted.T).T
        Z[:, k] = z
        resid[k] = float(np.sqrt(np.mean((target - fitted) ** 2)))
    return RegressionSolution(grid, brownian, Y, Z, resid, degree)
