"""Entropy-regularized cost of Gaussian policies.

    J = 1/2 E[ int (Y'HY + int a'Ra pi(da) + Z'NZ + sigma^2 Ent(pi | e^{-U})) dt + Y_0'G Y_0 ]

``int a'Ra pi(da) = v'Rv + tr(R Sigma)`` is added analytically. Time
integrals use the composite trapezoid rule on the model grid.
"""

from __future__ import annotations

import math

import numpy as np

from .brownian import path_generator, path_mean, path_var
from .errors import GridMismatch, NonSPD, ShapeMismatch
from .model import (
    LOG_2PI,
    CostReport,
    Flat,
    LQModel,
    StandardGaussian,
    ensure_validated,
)
from .policy import GaussianPolicyRule, optimal_policy_rule
from .simulate import SimulatedEnsemble


def _trapezoid(values: np.ndarray, dt: float) -> np.ndarray:
    """Composite trapezoid along the last axis."""
    return dt * (values[..., 1:-1].sum(axis=-1) + 0.5 * (values[..., 0] + values[..., -1]))


def _as_path(x, K1: int, shape: tuple, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape == shape:
        return np.broadcast_to(arr, (K1,) + shape)
    if arr.shape == (K1,) + shape:
        return arr
    if arr.ndim == 0 or arr.shape == (K1,):
        return np.broadcast_to(arr.reshape(arr.shape + (1,) * len(shape)), (K1,) + shape)
    raise ShapeMismatch(f"{name} has shape {arr.shape}, expected {(K1,) + shape}")


def _cov_logdet(Sigma: np.ndarray, op: str) -> np.ndarray:
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        raise NonSPD("policy covariance is not positive definite", module="evaluate", op=op) from None
    return 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)


def entropy_path(v: np.ndarray, Sigma: np.ndarray, reference, op: str = "cost") -> np.ndarray:
    """``Ent(N(v_k, Sigma_k) | e^{-U})`` for means ``v`` of shape ``(..., K+1, p)``."""
    p = Sigma.shape[-1]
    logdet = _cov_logdet(Sigma, op)
    if isinstance(reference, StandardGaussian):
        tr = np.trace(Sigma, axis1=-2, axis2=-1)
        return 0.5 * (tr + np.sum(v * v, axis=-1) - p - logdet)
    if isinstance(reference, Flat):
        return np.broadcast_to(-0.5 * (p * (1.0 + LOG_2PI) + logdet), v.shape[:-1])
    raise ShapeMismatch("closed-form Gaussian entropy needs a standard-Gaussian or flat reference")


def cost_of_exploration(m: LQModel, Sigma_path) -> float:
    """``1/2 int tr(R_t Sigma_t) dt``."""
    K1 = m.grid.n_knots
    S = _as_path(Sigma_path, K1, (m.p, m.p), "Sigma_path")
    tr = np.einsum("kij,kji->k", m.R.values, S)
    return float(0.5 * _trapezoid(tr, m.grid.dt))


def affine_state(m: LQModel, v_path) -> tuple[np.ndarray, np.ndarray]:
    """``Y = alpha + beta W`` for a deterministic control mean ``v``.

    Backward RK4 for ``beta' = A beta`` and ``alpha' = A alpha + B v + C beta``
    with ``(alpha_T, beta_T) = (c, q)``; the control mean inside a step is the
    average of its two knot values.
    """
    K, dt, n = m.grid.n_steps, m.grid.dt, m.n
    v = _as_path(v_path, K + 1, (m.p,), "v_path")
    A, B, C = (getattr(m, x).values for x in "ABC")
    alpha = np.zeros((K + 1, n))
    beta = np.zeros((K + 1, n))
    alpha[K] = m.terminal.c
    beta[K] = m.terminal.q
    for k in range(K - 1, -1, -1):
        Ak, Ck = A[k], C[k]
        # constant forcing over the step, so RK4 stages only differ in the state
        f = B[k] @ (0.5 * (v[k] + v[k + 1]))

        def rhs(al, be):
            return Ak @ al + f + Ck @ be, Ak @ be

        a1, b1 = alpha[k + 1], beta[k + 1]
        ka1, kb1 = rhs(a1, b1)
        ka2, kb2 = rhs(a1 - 0.5 * dt * ka1, b1 - 0.5 * dt * kb1)
        ka3, kb3 = rhs(a1 - 0.5 * dt * ka2, b1 - 0.5 * dt * kb2)
        ka4, kb4 = rhs(a1 - dt * ka3, b1 - dt * kb3)
        alpha[k] = a1 - dt / 6.0 * (ka1 + 2 * ka2 + 2 * ka3 + ka4)
        beta[k] = b1 - dt / 6.0 * (kb1 + 2 * kb2 + 2 * kb3 + kb4)
    return alpha, beta


def cost_quadrature(m: LQModel, v_path, Sigma_path) -> CostReport:
    """Exact-expectation cost of a Gaussian policy with deterministic mean path."""
    m = ensure_validated(m)
    K1, dt = m.grid.n_knots, m.grid.dt
    v = np.array(_as_path(v_path, K1, (m.p,), "v_path"))
    S = np.array(_as_path(Sigma_path, K1, (m.p, m.p), "Sigma_path"))
    H, N, R = (getattr(m, x).values for x in "HNR")
    alpha, beta = affine_state(m, v)
    t = m.grid.knots
    state = np.einsum("ki,kij,kj->k", alpha, H, alpha) + t * np.einsum("ki,kij,kj->k", beta, H, beta)
    tr = np.einsum("kij,kji->k", R, S)
    control = np.einsum("ki,kij,kj->k", v, R, v) + tr
    z = np.einsum("ki,kij,kj->k", beta, N, beta)
    ent = entropy_path(v, S, m.reference, "cost_quadrature")
    comps = {
        "state_cost": 0.5 * _trapezoid(state, dt),
        "control_cost": 0.5 * _trapezoid(control, dt),
        "z_cost": 0.5 * _trapezoid(z, dt),
        "entropy_cost": 0.5 * m.sigma**2 * _trapezoid(ent, dt),
        "endpoint_cost": 0.5 * float(alpha[0] @ m.G @ alpha[0]),
    }
    return CostReport.from_components(comps, std_error=0.0, n_paths=0, coe=0.5 * _trapezoid(tr, dt))


def variation_path(m: LQModel, delta) -> np.ndarray:
    """State response ``V`` to a deterministic mean shift ``delta``.

    ``V' = A V + B delta`` with ``V_T = 0``, stepped backward as
    ``V_k = V_{k+1} - dt (A_k V_{k+1} + B_k delta_k)``. This is the discrete
    dual of the Euler step used for the adjoint, which makes the sampled
    duality identity exact path by path up to the martingale term.
    """
    K, dt = m.grid.n_steps, m.grid.dt
    d = _as_path(delta, K + 1, (m.p,), "delta")
    A, B = m.A.values, m.B.values
    V = np.zeros((K + 1, m.n))
    for k in range(K - 1, -1, -1):
        V[k] = V[k + 1] - dt * (A[k] @ V[k + 1] + B[k] @ d[k])
    return V


def _quad_form(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``x_k' M_k x_k`` for paths ``X`` of shape ``(n_paths, K+1, d)``."""
    # d is small, so a sum over entries beats einsum's generic kernel
    d = X.shape[-1]
    out = np.zeros(X.shape[:-1])
    for i in range(d):
        xi = X[..., i]
        for j in range(d):
            if np.any(M[:, i, j]):
                out += M[None, :, i, j] * xi * X[..., j]
    return out


def running_integrands(m: LQModel, ens: SimulatedEnsemble, rule: GaussianPolicyRule, *, sample_actions: bool = False):
    """Per-path, per-knot running-cost integrands (before the factor 1/2).

    Returns ``(integrands, Y0, trace)`` where ``integrands`` maps
    ``state, control, z, entropy`` to arrays ``(n_paths, K+1)``; the entropy
    entry already carries the ``sigma^2`` weight. The rule must use the
    ensemble's feedback gain; its mean shift enters the state through
    :func:`variation_path` (``Y + V``, ``Z`` unchanged). With
    ``sample_actions`` one action per (path, knot) replaces the analytic
    ``v'Rv + tr(R Sigma)`` term.
    """
    m = ensure_validated(m)
    if ens.grid != m.grid:
        raise GridMismatch("ensemble and model use different time grids")
    if rule.Sigma.shape[0] != m.grid.n_knots:
        raise GridMismatch("policy rule and model use different time grids")
    if rule.gain.shape != ens.gain.shape or np.abs(rule.gain - ens.gain).max() > 1e-12:
        raise ValueError("Monte-Carlo costs need a rule with the ensemble's feedback gain")
    H, N, R = (getattr(m, x).values for x in "HNR")
    shift = rule.mean_shift
    Y = ens.Y
    if np.any(shift):
        Y = Y + variation_path(m, shift)[None]
    v = ens.v + shift[None]
    S = rule.Sigma
    tr = np.einsum("kij,kji->k", R, S)
    if sample_actions:
        L = np.linalg.cholesky(S)
        act = np.empty_like(v)
        for i in range(ens.n_paths):
            z = path_generator(ens.brownian.seed, ens.brownian.path_offset + i, 0xAC7).standard_normal(v.shape[1:])
            act[i] = v[i] + np.einsum("kij,kj->ki", L, z)
        control = _quad_form(act, R)
    else:
        control = _quad_form(v, R) + tr[None]
    ent = entropy_path(v, S, m.reference, "cost_monte_carlo")
    integrands = {
        "state": _quad_form(Y, H),
        "control": control,
        "z": _quad_form(ens.Z, N),
        "entropy": m.sigma**2 * np.broadcast_to(ent, control.shape),
    }
    return integrands, Y[:, 0], tr


def per_path_costs(m: LQModel, ens: SimulatedEnsemble, rule: GaussianPolicyRule, *, sample_actions: bool = False):
    """Per-path total cost, per-path components and the cost of exploration."""
    m = ensure_validated(m)
    dt = m.grid.dt
    f, Y0, tr = running_integrands(m, ens, rule, sample_actions=sample_actions)
    comps = {
        "state_cost": 0.5 * _trapezoid(f["state"], dt),
        "control_cost": 0.5 * _trapezoid(f["control"], dt),
        "z_cost": 0.5 * _trapezoid(f["z"], dt),
        "entropy_cost": 0.5 * _trapezoid(f["entropy"], dt),
        "endpoint_cost": 0.5 * np.einsum("si,ij,sj->s", Y0, m.G, Y0),
    }
    total = sum(comps.values())
    return total, comps, 0.5 * _trapezoid(tr, dt)


def integrand_means(m: LQModel, ens: SimulatedEnsemble, rule: GaussianPolicyRule | None = None) -> dict:
    """Per-knot path means of the running-cost integrands."""
    f, _, _ = running_integrands(m, ens, rule or optimal_policy_rule(m))
    return {k: path_mean(v) for k, v in f.items()}


def standard_error(samples: np.ndarray) -> float:
    """Sample std over sqrt(n); infinite for a single sample."""
    n = samples.shape[0]
    if n < 2:
        return math.inf
    return float(math.sqrt(path_var(samples) / n))


def cost_monte_carlo(m: LQModel, ens: SimulatedEnsemble, rule: GaussianPolicyRule | None = None, *, sample_actions: bool = False) -> CostReport:
    rule = rule or optimal_policy_rule(m)
    total, comps, coe = per_path_costs(m, ens, rule, sample_actions=sample_actions)
    means = {k: float(path_mean(c)) for k, c in comps.items()}
    return CostReport.from_components(means, std_error=standard_error(total), n_paths=ens.n_paths, coe=float(coe))


def cost_difference_paths(m: LQModel, ens: SimulatedEnsemble, rule: GaussianPolicyRule, base: GaussianPolicyRule) -> np.ndarray:
    """Per-path ``J(rule) - J(base)`` for rules sharing the ensemble's gain.

    The rules differ only in mean shift and covariance, so the state moves
    by the deterministic variation ``V`` of the shift difference and every
    term of the difference is linear or constant in the path values; it is
    evaluated with one matrix-vector product per term instead of
    recomputing both costs.
    """
    m = ensure_validated(m)
    for r in (rule, base):
        if r.gain.shape != ens.gain.shape or np.abs(r.gain - ens.gain).max() > 1e-12:
            raise ValueError("Monte-Carlo costs need a rule with the ensemble's feedback gain")
    if ens.grid != m.grid or rule.Sigma.shape[0] != m.grid.n_knots or base.Sigma.shape[0] != m.grid.n_knots:
        raise GridMismatch("ensemble, rules and model use different time grids")
    K1, dt = m.grid.n_knots, m.grid.dt
    w = np.full(K1, dt)
    w[[0, -1]] *= 0.5
    H, R = m.H.values, m.R.values
    d = rule.mean_shift - base.mean_shift
    V = variation_path(m, d)
    Y = ens.Y
    Vb = variation_path(m, base.mean_shift) if np.any(base.mean_shift) else None
    vb = ens.v + base.mean_shift[None]
    # per-knot coefficients of the terms linear in Y and in v
    cy = 2.0 * np.einsum("kij,kj->ki", H, V) * w[:, None]
    cv = 2.0 * np.einsum("kij,kj->ki", R, d) * w[:, None]
    const = np.einsum("k,ki,kij,kj->", w, V, H, V) + np.einsum("k,ki,kij,kj->", w, d, R, d)
    const += np.dot(w, np.einsum("kij,kji->k", R, rule.Sigma - base.Sigma))
    ent = entropy_path(np.zeros((K1, m.p)), rule.Sigma, m.reference, "cost_difference") - entropy_path(
        np.zeros((K1, m.p)), base.Sigma, m.reference, "cost_difference"
    )
    const += m.sigma**2 * np.dot(w, ent)
    if isinstance(m.reference, StandardGaussian):
        # |v + d|^2 / 2 - |v|^2 / 2 inside the relative entropy
        cv += m.sigma**2 * d * w[:, None]
        const += 0.5 * m.sigma**2 * np.dot(w, np.sum(d * d, axis=1))
    n_paths = ens.n_paths
    diff = Y.reshape(n_paths, -1) @ cy.ravel() + vb.reshape(n_paths, -1) @ cv.ravel() + const
    if Vb is not None:
        diff += float(np.dot(Vb.ravel(), cy.ravel()))
    y0 = Y[:, 0] + (Vb[0] if Vb is not None else 0.0)
    G = m.G
    diff += 2.0 * y0 @ (G @ V[0]) + float(V[0] @ G @ V[0])
    return 0.5 * diff


def paired_cost_difference(
    m: LQModel,
    ens: SimulatedEnsemble,
    rule: GaussianPolicyRule,
    base: GaussianPolicyRule | None = None,
) -> tuple[float, float]:
    """Mean and standard error of ``J(rule) - J(base)`` on common paths."""
    d = cost_difference_paths(m, ens, rule, base or optimal_policy_rule(m))
    return float(path_mean(d)), standard_error(d)
