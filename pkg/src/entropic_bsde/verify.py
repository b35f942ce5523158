"""Numerical checks of the optimality conditions and their consequences.

Every check returns a :class:`CheckReport`. Grid-based checks certify the
sampled grid of actions, paths and knots only; nothing here is a proof over
all admissible controls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .brownian import path_generator, path_mean
from .bsde import solve_phi
from .errors import GridMismatch, NonPSD
from .evaluate import (
    cost_monte_carlo,
    cost_of_exploration,
    cost_quadrature,
    affine_state,
    paired_cost_difference,
    standard_error,
    variation_path,
)
from .model import (
    LOG_2PI,
    GridDensity,
    LQModel,
    adjoint_is_deterministic,
    check_same_grid,
    ensure_validated,
    replace_model,
    validate_model,
)
from .policy import (
    GaussianPolicyRule,
    beta_from_exponent,
    gaussian_lagrange_beta,
    gaussian_log_density,
    gibbs_exponent,
    optimal_policy_rule,
    stationarity_residual,
)
from .riccati import solve_riccati
from .simulate import SimulatedEnsemble, simulate_hamiltonian_system

EXACT_TOL = 1e-10


@dataclass
class CheckReport:
    name: str
    passed: bool
    statistic: float | None
    tolerance: float | None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pass": bool(self.passed),
            "statistic": self.statistic,
            "tolerance": self.tolerance,
            "details": self.details,
        }


# ---------------------------------------------------------------------------
# maximum-principle inequality on a grid
# ---------------------------------------------------------------------------


def mp_pairing(mu: GridDensity, h, u, sigma: float, pi: GridDensity) -> float:
    """``int (h + (sigma^2/2)(ln mu + U)) (pi - mu) da`` on the shared grid.

    Where ``mu`` vanishes but ``pi`` does not the pairing is ``+inf``.
    """
    check_same_grid(mu.grid, pi.grid)
    w = pi.values - mu.values
    pos = mu.values > 0
    if np.any(~pos & (pi.values > 0)):
        return math.inf
    integrand = np.zeros_like(w)
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    integrand[pos] = (h[pos] + 0.5 * sigma**2 * (np.log(mu.values[pos]) + u[pos])) * w[pos]
    return mu.grid.integrate(integrand)


def mp_inequality_check(mu: GridDensity, h, u, sigma: float, test_policies, *, tol: float = 1e-6) -> CheckReport:
    """Finite certificate of the maximum-principle inequality over ``test_policies``."""
    vals = [mp_pairing(mu, h, u, sigma, pi) for pi in test_policies]
    worst = min(vals) if vals else 0.0
    return CheckReport(
        "mp_inequality",
        bool(worst >= -tol),
        float(worst),
        tol,
        {"values": vals, "scope": f"{len(vals)} test policies on a {mu.grid.n_points}-point grid"},
    )


# ---------------------------------------------------------------------------
# stationarity of the Hamiltonian system
# ---------------------------------------------------------------------------


def _stationarity_path(m: LQModel, rule: GaussianPolicyRule, P: np.ndarray, knots, u_shift: float, n_std: float, points_per_std: int) -> float:
    """Worst residual along one adjoint path ``P`` of shape ``(K+1, n)``."""
    sigma = m.sigma
    knots = np.asarray(list(knots), dtype=int)
    B, R = m.B.values[knots], m.R.values[knots]
    Pk = P[knots]
    b = np.einsum("kip,ki->kp", B, Pk)
    mean = np.einsum("kpi,ki->kp", rule.gain[knots], Pk) + rule.mean_shift[knots]
    S = rule.Sigma[knots]
    if m.p == 1:
        # lattice of +-n_std standard deviations around each knot's mean
        x = np.linspace(-n_std, n_std, int(round(2 * n_std * points_per_std)) + 1)
        std = np.sqrt(S[:, 0, 0])
        a = mean[:, :1] + std[:, None] * x[None]
        h = b[:, :1] * a + 0.5 * R[:, 0, :1] * a * a
        u = m.reference.potential(a[..., None]) + u_shift
        step = std * (x[1] - x[0])
        beta = beta_from_exponent(gibbs_exponent(h, u, sigma), step, sigma)[:, None]
        log_mu = -0.5 * ((a - mean[:, :1]) / std[:, None]) ** 2 - np.log(std)[:, None] - 0.5 * LOG_2PI
    else:
        worst = 0.0
        for j, k in enumerate(knots):
            z = path_generator(int(k), 0, m.p).standard_normal((256, m.p))
            a = mean[j] + n_std / 3.0 * z @ np.linalg.cholesky(S[j]).T
            h = a @ b[j] + 0.5 * np.einsum("si,ij,sj->s", a, R[j], a)
            u = m.reference.potential(a) + u_shift
            beta = gaussian_lagrange_beta(m, Pk[j], int(k)) - 0.5 * sigma**2 * u_shift
            log_mu = gaussian_log_density(a, mean[j], S[j])
            worst = max(worst, float(np.abs(stationarity_residual(h, u, log_mu, beta, sigma)).max()))
        return worst
    return float(np.abs(stationarity_residual(h, u, log_mu, beta, sigma)).max())


def hamiltonian_stationarity_check(
    ens: SimulatedEnsemble,
    m: LQModel,
    rule: GaussianPolicyRule | None = None,
    *,
    n_paths: int = 10,
    knots=None,
    u_shift: float = 0.0,
    tol: float = 1e-8,
    n_std: float = 8.0,
    points_per_std: int = 100,
) -> CheckReport:
    """Sup over sampled (path, knot, action) of
    ``P'B a + a'Ra/2 + (sigma^2/2)(U + ln mu + 1) + beta``.

    ``mu`` is the rule's Gaussian; ``beta`` is computed on the action grid
    for one-dimensional controls and in closed form otherwise.
    """
    m = ensure_validated(m)
    rule = rule or optimal_policy_rule(m)
    if ens.grid != m.grid:
        raise GridMismatch("ensemble and model use different time grids")
    knots = range(m.grid.n_knots) if knots is None else knots
    worst = 0.0
    count = 0
    knots = list(knots)
    for i in range(min(n_paths, ens.n_paths)):
        worst = max(worst, _stationarity_path(m, rule, ens.P[i], knots, u_shift, n_std, points_per_std))
        count += len(knots)
    return CheckReport(
        "hamiltonian_stationarity",
        bool(worst <= tol),
        worst,
        tol,
        {"evaluations": count, "scope": f"{min(n_paths, ens.n_paths)} paths, action grid of +-{n_std} std"},
    )


# ---------------------------------------------------------------------------
# duality identity
# ---------------------------------------------------------------------------


def duality_terms(m: LQModel, ens: SimulatedEnsemble, delta) -> np.ndarray:
    """Per-path ``G Y_0 . V_0 + sum_k dt (Y_k' H_k V_{k+1} - P_k' B_k delta_k)``.

    With the discrete variation of :func:`variation_path` this equals minus
    the martingale sum ``sum_k (C_k'P_k + N_k Z_k) dW_k . V_{k+1}`` on every
    path, so it has mean zero and vanishes when ``C = N = 0``.
    """
    m = ensure_validated(m)
    if ens.grid != m.grid:
        raise GridMismatch("ensemble and model use different time grids")
    K, dt = m.grid.n_steps, m.grid.dt
    V = variation_path(m, delta)
    d = np.broadcast_to(np.asarray(delta, dtype=float), (K + 1, m.p)) if np.ndim(delta) < 2 else np.asarray(delta)
    H, B = m.H.values, m.B.values
    HV = np.einsum("kij,kj->ki", H[:K], V[1:])
    Bd = np.einsum("kij,kj->ki", B[:K], d[:K])
    run = np.einsum("ski,ki->sk", ens.Y[:, :K], HV) - np.einsum("ski,ki->sk", ens.P[:, :K], Bd)
    return ens.Y[:, 0] @ m.G @ V[0] + dt * run.sum(axis=1)


def duality_identity_check(m: LQModel, ens: SimulatedEnsemble, delta, *, n_se: float = 3.0) -> CheckReport:
    m = ensure_validated(m)
    terms = duality_terms(m, ens, delta)
    est = float(path_mean(terms))
    se = standard_error(terms)
    if adjoint_is_deterministic(m):
        tol, mode = EXACT_TOL, "exact"
    else:
        tol, mode = n_se * se, f"{n_se:g} standard errors"
    return CheckReport(
        "duality_identity",
        bool(abs(est) <= tol),
        est,
        tol,
        {"std_error": se, "n_paths": ens.n_paths, "mode": mode},
    )


# ---------------------------------------------------------------------------
# sigma -> 0 degeneration
# ---------------------------------------------------------------------------


def _spectral_max(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, ord=2, axis=(-2, -1)).max())


def degeneration_check(m: LQModel, sigmas, *, slope_tol: float = 0.05) -> CheckReport:
    """COE, ``||Sigma||`` and ``||K^sigma - K^0||`` along decreasing ``sigmas``."""
    m = ensure_validated(m)
    sigmas = [float(s) for s in sigmas]
    if len(sigmas) < 2 or any(b >= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError("sigmas must be a strictly decreasing list of at least two values")
    R, B = m.R.values, m.B.values
    lo = np.linalg.eigvalsh(R)[:, 0]
    if np.any(lo <= 0):
        raise NonPSD("R", float(m.grid.knots[int(np.argmin(lo))]), "degeneration needs R positive definite")
    K0 = -np.linalg.solve(R, np.swapaxes(B, -1, -2))
    rows = []
    for s in sigmas:
        ms = validate_model(replace_model(m, sigma=s))
        rule = optimal_policy_rule(ms)
        rows.append(
            {
                "sigma": s,
                "coe": cost_of_exploration(ms, rule.Sigma),
                "sigma_norm": _spectral_max(rule.Sigma),
                "gain_gap": _spectral_max(rule.gain - K0),
            }
        )
    coe = np.array([r["coe"] for r in rows])
    slope = float(np.polyfit(np.log(sigmas), np.log(coe), 1)[0])
    gaps = [r["gain_gap"] for r in rows]
    norms = [r["sigma_norm"] for r in rows]
    monotone = all(b < a for a, b in zip(gaps, gaps[1:])) or not any(gaps)
    shrinking = all(b < a for a, b in zip(norms, norms[1:]))
    ok = abs(slope - 2.0) <= slope_tol and monotone and shrinking
    return CheckReport(
        "degeneration",
        bool(ok),
        slope,
        slope_tol,
        {"table": rows, "gain_monotone": monotone, "sigma_shrinking": shrinking, "target_slope": 2.0},
    )


# ---------------------------------------------------------------------------
# law of large numbers for the exploratory drift
# ---------------------------------------------------------------------------


def lln_exploratory_check(
    m: LQModel,
    rule: GaussianPolicyRule | None = None,
    path_counts=(100, 1_000, 10_000, 100_000),
    seed: int = 42,
    *,
    n_seeds: int = 10,
    replicates: int = 32,
    knot: int = 0,
    P=None,
    slope_tol: float = 0.1,
) -> CheckReport:
    """Error of ``(1/N) sum_i B a_i`` against ``B v`` for ``a_i ~ N(v, Sigma)``.

    The mean absolute error at each ``N`` is averaged over ``n_seeds`` seeds
    with ``replicates`` independent draws each, then regressed on ``N`` in
    log-log scale.
    """
    m = ensure_validated(m)
    rule = rule or optimal_policy_rule(m)
    counts = [int(n) for n in path_counts]
    if max(counts) < 100 * min(counts):
        raise ValueError("path_counts must span at least two decades")
    P = np.zeros(m.n) if P is None else np.asarray(P, dtype=float)
    v = rule.gain[knot] @ P + rule.mean_shift[knot]
    L = np.linalg.cholesky(rule.Sigma[knot])
    B = m.B.values[knot]
    errors = []
    for N in counts:
        errs = []
        for s in range(n_seeds):
            gen = path_generator(seed, s, N)
            for _ in range(replicates):
                z = gen.standard_normal((N, m.p))
                errs.append(float(np.linalg.norm(B @ (L @ z.mean(axis=0)))))
        errors.append(float(np.mean(errs)))
    details = {"path_counts": counts, "mean_abs_error": errors, "drift": (B @ v).tolist(), "n_seeds": n_seeds}
    if not any(errors):
        details["degenerate"] = True
        return CheckReport("lln_exploratory", True, None, slope_tol, details)
    slope = float(np.polyfit(np.log(counts), np.log(errors), 1)[0])
    return CheckReport("lln_exploratory", bool(abs(slope + 0.5) <= slope_tol), slope, slope_tol, details)


# ---------------------------------------------------------------------------
# first-order perturbation rate
# ---------------------------------------------------------------------------


def epsilon_rate_check(m: LQModel, delta, epsilons=(0.1, 0.05, 0.025), *, v_path=None, slope_tol: float = 0.1) -> CheckReport:
    """Slope of ``log sup_t E|Y^eps - Y|^2`` against ``log eps`` for mean shifts ``eps delta``.

    Both states follow the affine ansatz, so ``E|Y^eps - Y|^2 = |alpha^eps - alpha|^2``
    (the Brownian loading is unaffected by a deterministic shift).
    """
    m = ensure_validated(m)
    eps = [float(e) for e in epsilons]
    K1 = m.grid.n_knots
    base_v = np.zeros((K1, m.p)) if v_path is None else np.broadcast_to(np.asarray(v_path, dtype=float), (K1, m.p))
    d = np.broadcast_to(np.asarray(delta, dtype=float), (K1, m.p)) if np.ndim(delta) < 2 else np.asarray(delta, dtype=float)
    a0, b0 = affine_state(m, base_v)
    gaps = []
    for e in eps:
        a1, b1 = affine_state(m, base_v + e * d)
        gaps.append(float(np.max(np.sum((a1 - a0) ** 2, axis=1) + m.grid.knots * np.sum((b1 - b0) ** 2, axis=1))))
    pos = [(e, g) for e, g in zip(eps, gaps) if e > 0]
    details = {"epsilons": eps, "sup_mean_square_gap": gaps}
    if len(pos) < 2 or not all(g > 0 for _, g in pos):
        details["degenerate"] = True
        return CheckReport("epsilon_rate", False, None, slope_tol, details)
    slope = float(np.polyfit(np.log([e for e, _ in pos]), np.log([g for _, g in pos]), 1)[0])
    return CheckReport("epsilon_rate", bool(abs(slope - 2.0) <= slope_tol), slope, slope_tol, details)


# ---------------------------------------------------------------------------
# optimality against perturbed policies
# ---------------------------------------------------------------------------


def random_perturbations(m: LQModel, n_shifts: int, seed: int = 0, rms_range=(0.1, 0.3)):
    """Mean shifts ``a + b t + c sin(2 pi t)`` per control component.

    Coefficients are drawn at random, then the shift is rescaled so its
    root-mean-square over the grid is uniform in ``rms_range``.
    """
    gen = path_generator(seed, 0, 0x5EED)
    t = m.grid.knots[:, None]
    out = []
    for _ in range(n_shifts):
        a, b, c = gen.normal(size=(3, m.p))
        d = a + b * t + c * np.sin(2 * np.pi * t)
        rms = math.sqrt(float(np.mean(np.sum(d * d, axis=1))))
        out.append(d * gen.uniform(*rms_range) / rms)
    return out


def optimality_check(
    m: LQModel,
    *,
    n_paths: int = 10_000,
    seed: int = 42,
    n_shifts: int = 18,
    sigma_scales=(0.5, 2.0),
    n_se: float = 3.0,
    perturbation_seed: int = 0,
    ens: SimulatedEnsemble | None = None,
) -> CheckReport:
    """Compare the optimal Gaussian policy with perturbed ones.

    The perturbation family is drawn from ``perturbation_seed`` so that it
    does not change with the Monte-Carlo ``seed``. Perturbations are mean shifts of the optimal feedback (paired Monte Carlo
    on common paths), covariance scalings, and deterministic-mean policies
    costed by quadrature. A perturbation passes when its cost exceeds the
    optimal one by more than ``-n_se`` standard errors, or by more than
    ``-1e-10`` when the adjoint is deterministic.
    """
    m = ensure_validated(m)
    rule = optimal_policy_rule(m)
    if ens is None:
        th = solve_riccati(m)
        ens = simulate_hamiltonian_system(m, th, solve_phi(m, th), n_paths, seed)
    exact = adjoint_is_deterministic(m)
    opt = cost_monte_carlo(m, ens, rule)
    rows = []

    def record(kind, diff, se):
        margin = EXACT_TOL if exact else n_se * se
        rows.append({"kind": kind, "difference": diff, "std_error": se, "pass": bool(diff > -margin)})

    shifts = random_perturbations(m, n_shifts, perturbation_seed)
    for d in shifts:
        diff, se = paired_cost_difference(m, ens, rule.shifted(d), rule)
        record("mean_shift", diff, 0.0 if exact else se)
    for s in sigma_scales:
        diff, se = paired_cost_difference(m, ens, rule.scaled(s), rule)
        record(f"sigma_scale_{s:g}", diff, 0.0 if exact else se)
    # deterministic-mean policies around the average optimal mean
    vbar = path_mean(ens.v)
    for d in shifts[: max(1, n_shifts // 3)]:
        q = cost_quadrature(m, vbar + d, rule.Sigma)
        record("deterministic_mean", q.total - opt.total, 0.0 if exact else opt.std_error)
    worst = min(r["difference"] + (EXACT_TOL if exact else n_se * r["std_error"]) for r in rows)
    return CheckReport(
        "optimality",
        all(r["pass"] for r in rows),
        float(worst),
        0.0,
        {"optimal_cost": opt.to_dict(), "perturbations": rows, "n_perturbations": len(rows), "exact": exact},
    )
