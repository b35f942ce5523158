"""Gaussian feedback policies and the 1-D Gibbs fixed-point layer.

The optimal relaxed control is the Gibbs measure

    mu(a) ∝ exp(-U(a) - (2/sigma^2) h(a)),

where ``h`` is the flat derivative of the unregularized Hamiltonian. In the
LQ case ``h(a) = P^T B a + a^T R a / 2`` and ``mu`` is Gaussian with
covariance ``(sigma^2/2) W^{-1}`` and mean ``-W^{-1} B^T P``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateMass, NoConvergence, NonSPD, ShapeMismatch, TailMassError
from .model import (
    LOG_2PI,
    ControlGrid,
    Flat,
    GridDensity,
    GridPotential,
    LQModel,
    StandardGaussian,
    check_same_grid,
    control_weight,
    ensure_validated,
)

TAIL_MASS_LIMIT = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianPolicyRule:
    """``a ~ N(gain_k P + mean_shift_k, Sigma_k)`` at knot ``k``."""

    Sigma: np.ndarray
    gain: np.ndarray
    mean_shift: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.Sigma, dtype=float)
        if S.ndim != 3 or S.shape[1] != S.shape[2]:
            raise ShapeMismatch(f"Sigma must have shape (K+1, p, p), got {S.shape}")
        K1, p = S.shape[0], S.shape[1]
        G = np.asarray(self.gain, dtype=float)
        d = np.asarray(self.mean_shift, dtype=float)
        if G.ndim != 3 or G.shape[:2] != (K1, p):
            raise ShapeMismatch(f"gain must have shape (K+1, p, n), got {G.shape}")
        if d.shape != (K1, p):
            raise ShapeMismatch(f"mean_shift must have shape (K+1, p), got {d.shape}")
        if np.abs(S - np.swapaxes(S, -1, -2)).max() > 1e-12 * max(1.0, np.abs(S).max()):
            raise NonSPD("policy covariance is not symmetric", module="policy", op="GaussianPolicyRule")
        lo = np.linalg.eigvalsh(S)[:, 0]
        if np.any(lo <= 0):
            k = int(np.argmin(lo))
            raise NonSPD(f"policy covariance at knot {k} has eigenvalue {lo[k]:.3e}", module="policy", op="GaussianPolicyRule")
        for name, arr in (("Sigma", S), ("gain", G), ("mean_shift", d)):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return self.Sigma.shape[-1]

    def mean(self, P: np.ndarray) -> np.ndarray:
        """Policy mean for adjoint paths ``P`` of shape ``(n_paths, K+1, n)``."""
        return np.einsum("ski,kji->skj", P, self.gain) + self.mean_shift[None]

    def shifted(self, delta) -> "GaussianPolicyRule":
        delta = np.broadcast_to(np.asarray(delta, dtype=float), self.mean_shift.shape)
        return GaussianPolicyRule(self.Sigma, self.gain, self.mean_shift + delta)

    def scaled(self, s: float) -> "GaussianPolicyRule":
        return GaussianPolicyRule(s * self.Sigma, self.gain, self.mean_shift)


def optimal_policy_rule(m: LQModel) -> GaussianPolicyRule:
    """``Sigma = (sigma^2/2) W^{-1}``, ``K = -W^{-1} B^T`` with ``W`` from :func:`control_weight`."""
    m = ensure_validated(m)
    W = control_weight(m)
    Winv = np.linalg.inv(W)
    Winv = 0.5 * (Winv + np.swapaxes(Winv, -1, -2))
    gain = -Winv @ np.swapaxes(m.B.values, -1, -2)
    return GaussianPolicyRule(0.5 * m.sigma**2 * Winv, gain, np.zeros((m.grid.n_knots, m.p)))


def gaussian_log_density(a: np.ndarray, mean, Sigma) -> np.ndarray:
    """Log density of ``N(mean, Sigma)`` at points ``a`` (shape ``(..., p)`` or 1-D for p=1)."""
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    p = S.shape[0]
    a = np.asarray(a, dtype=float)
    flat = a.ndim <= 1 and p == 1
    x = (a[..., None] if flat else a) - np.atleast_1d(np.asarray(mean, dtype=float))
    L = np.linalg.cholesky(S)
    y = np.linalg.solve(L, x.reshape(-1, p).T).T.reshape(x.shape)
    out = -0.5 * np.sum(y * y, axis=-1) - np.sum(np.log(np.diag(L))) - 0.5 * p * LOG_2PI
    return out


# ---------------------------------------------------------------------------
# Gibbs layer (p = 1)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HamiltonianDerivativeSpec:
    """``h(a) = c0 + c1 a + c2 a^2 + d1 mean(mu) a``."""

    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    d1: float = 0.0

    def evaluate(self, a: np.ndarray, mean: float = 0.0) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        return self.c0 + (self.c1 + self.d1 * mean) * a + self.c2 * a * a

    @classmethod
    def from_lq(cls, m: LQModel, P, k: int = 0) -> "HamiltonianDerivativeSpec":
        """LQ instance at knot ``k``: ``c1 = P^T B``, ``c2 = R/2`` (needs p = 1)."""
        if m.p != 1:
            raise ShapeMismatch("the grid Gibbs layer supports one-dimensional controls only")
        P = np.atleast_1d(np.asarray(P, dtype=float))
        c1 = float(P @ m.B.values[k][:, 0])
        return cls(0.0, c1, 0.5 * float(m.R.values[k, 0, 0]), 0.0)


@dataclass(frozen=True)
class LagrangeReport:
    beta: float
    residual_sup: float

    def to_dict(self) -> dict:
        return {"beta": self.beta, "residual_sup": self.residual_sup}


def reference_values(reference, grid: ControlGrid) -> np.ndarray:
    if isinstance(reference, GridPotential):
        check_same_grid(reference.grid, grid)
        return np.array(reference.values)
    return reference.potential(grid.points)


def gibbs_exponent(h: np.ndarray, u: np.ndarray, sigma: float) -> np.ndarray:
    e = -np.asarray(u, dtype=float) - (2.0 / sigma**2) * np.asarray(h, dtype=float)
    if not np.all(np.isfinite(e)):
        raise ValueError("Gibbs exponent must be finite on the grid")
    return e


def log_partition(grid: ControlGrid, exponent: np.ndarray) -> float:
    """``ln int exp(exponent) da`` by trapezoid with the max-exponent shift."""
    return float(log_partition_batch(exponent, grid.step))


def log_partition_batch(exponent: np.ndarray, step) -> np.ndarray:
    """Trapezoid log-partition along the last axis for uniform lattices of spacing ``step``."""
    e = np.asarray(exponent, dtype=float)
    logw = np.zeros(e.shape[-1])
    logw[0] = logw[-1] = -math.log(2.0)
    return logsumexp(e + logw, axis=-1) + np.log(step)


def beta_from_exponent(exponent: np.ndarray, step, sigma: float) -> np.ndarray:
    """``beta = (sigma^2/2)(ln Z - 1)`` for Gibbs exponents tabulated on uniform lattices."""
    return 0.5 * sigma**2 * (log_partition_batch(exponent, step) - 1.0)


def tail_mass(grid: ControlGrid, log_mu: np.ndarray) -> float:
    """Estimated density mass beyond both grid ends.

    Each tail is extrapolated as an exponential with the edge log-slope, so
    the mass past an edge is ``mu_edge / |d ln mu / da|``; a slope pointing
    outward means the tail is not decaying and the estimate is infinite.
    """
    h = grid.step
    total = 0.0
    for edge, inner in ((log_mu[0], log_mu[1]), (log_mu[-1], log_mu[-2])):
        if edge == -np.inf:
            continue
        slope = (edge - inner) / h
        if slope >= 0:
            return math.inf
        total += math.exp(edge) / -slope
    return total


def gibbs_density(grid: ControlGrid, h, u, sigma: float, *, check_tails: bool = True) -> GridDensity:
    """Normalized ``exp(-U - (2/sigma^2) h)`` on the grid."""
    e = gibbs_exponent(h, u, sigma)
    shifted = e - e.max()
    vals = np.exp(shifted)
    mass = grid.integrate(vals)
    if not (mass > 0 and math.isfinite(mass)):
        raise DegenerateMass("Gibbs weights have no mass on the grid", module="policy", op="gibbs_density")
    log_mu = shifted - math.log(mass)
    if check_tails:
        tm = tail_mass(grid, log_mu)
        if not tm < TAIL_MASS_LIMIT:
            raise TailMassError(
                f"estimated mass {tm:.3e} outside [{grid.a_min}, {grid.a_max}]; widen the control grid",
                module="policy",
                op="gibbs_density",
            )
    return GridDensity(grid, vals / mass)


def stationarity_residual(h, u, log_mu, beta: float, sigma: float) -> np.ndarray:
    """``h + (sigma^2/2)(U + ln mu + 1) + beta`` pointwise."""
    return np.asarray(h) + 0.5 * sigma**2 * (np.asarray(u) + np.asarray(log_mu) + 1.0) + beta


def lagrange_beta(grid: ControlGrid, h, u, sigma: float, *, check_tails: bool = True) -> LagrangeReport:
    """Multiplier ``beta = (sigma^2/2)(ln int exp(-U - 2h/sigma^2) da - 1)`` and the
    sup-norm of the first-order condition with ``mu`` from :func:`gibbs_density`."""
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    mu = gibbs_density(grid, h, u, sigma, check_tails=check_tails)
    beta = float(beta_from_exponent(gibbs_exponent(h, u, sigma), grid.step, sigma))
    # log of subnormal values loses precision, so only normal floats are tested
    ok = mu.values >= np.finfo(float).tiny
    r = stationarity_residual(h[ok], u[ok], np.log(mu.values[ok]), beta, sigma)
    return LagrangeReport(beta, float(np.abs(r).max()))


def gaussian_lagrange_beta(m: LQModel, P, k: int) -> float:
    """Closed-form multiplier for the LQ Gibbs measure at adjoint value ``P``.

    ``ln Z = -1/2 ln det M + 1/2 b^T M^{-1} b`` (plus ``(p/2) ln 2 pi`` for
    the flat prior) with ``M = (2/sigma^2) W`` and ``b = (2/sigma^2) B^T P``.
    """
    s2 = m.sigma**2
    W = control_weight(m)[k]
    M = (2.0 / s2) * W
    b = (2.0 / s2) * (m.B.values[k].T @ np.atleast_1d(np.asarray(P, dtype=float)))
    sign, logdet = np.linalg.slogdet(M)
    lnZ = -0.5 * logdet + 0.5 * float(b @ np.linalg.solve(M, b))
    if isinstance(m.reference, Flat):
        lnZ += 0.5 * m.p * LOG_2PI
    return 0.5 * s2 * (lnZ - 1.0)


@dataclass(frozen=True, eq=False)
class FixedPointResult:
    density: GridDensity
    iterations: int
    gap: float
    lagrange: LagrangeReport


def default_control_grid(reference, n_points: int = 2001) -> ControlGrid:
    """``[-10 s, 10 s]`` with ``s`` the prior's standard deviation."""
    if isinstance(reference, GridPotential):
        return reference.grid
    if isinstance(reference, StandardGaussian):
        return ControlGrid(-10.0, 10.0, n_points)
    raise ShapeMismatch("a flat prior has no scale; pass an explicit control grid")


def gibbs_fixed_point(
    spec: HamiltonianDerivativeSpec,
    reference,
    sigma: float,
    *,
    grid: ControlGrid | None = None,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> FixedPointResult:
    """Damped iteration ``mu <- (1 - damping) mu + damping Gibbs(mu)`` from the prior.

    Stops at the first iterate with ``||Gibbs(mu) - mu||_1 < tol``; the
    iteration count is the number of damped updates performed.
    """
    if not 0 < damping <= 1:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    if not tol > 0 or max_iter < 1:
        raise ValueError("need tol > 0 and max_iter >= 1")
    grid = grid or default_control_grid(reference)
    a = grid.points
    u = reference_values(reference, grid)
    mu = GridDensity.from_unnormalized(grid, np.exp(-(u - u.min())))

    def gibbs(m: GridDensity) -> GridDensity:
        return gibbs_density(grid, spec.evaluate(a, m.mean()), u, sigma)

    g = gibbs(mu)
    gap = math.inf
    for it in range(1, max_iter + 1):
        mu = GridDensity.from_unnormalized(grid, (1.0 - damping) * mu.values + damping * g.values)
        g = gibbs(mu)
        gap = mu.l1_distance(g)
        if gap < tol:
            h = spec.evaluate(a, mu.mean())
            return FixedPointResult(mu, it, gap, lagrange_beta(grid, h, u, sigma))
    raise NoConvergence(max_iter, gap, module="policy", op="gibbs_fixed_point")
