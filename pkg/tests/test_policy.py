from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from entropic_bsde.errors import NonSPD, NoConvergence, TailMassError
from entropic_bsde.model import ControlGrid, Flat, StandardGaussian, constant_model
from entropic_bsde.policy import (
    HamiltonianDerivativeSpec,
    default_control_grid,
    gaussian_lagrange_beta,
    gaussian_log_density,
    gibbs_density,
    gibbs_fixed_point,
    lagrange_beta,
    optimal_policy_rule,
    reference_values,
)

GRID = ControlGrid(-10.0, 10.0, 4001)


def test_optimal_rule_standard_gaussian():
    rule = optimal_policy_rule(constant_model(B=1.7))
    assert np.allclose(rule.Sigma, 0.5, atol=1e-15)
    assert np.allclose(rule.gain, -1.7, atol=1e-15)
    assert np.all(rule.mean_shift == 0.0)


def test_optimal_rule_flat_prior():
    rule = optimal_policy_rule(constant_model(reference=Flat()))
    assert np.allclose(rule.Sigma, 1.0, atol=1e-15)
    assert np.allclose(rule.gain, -2.0, atol=1e-15)


def test_flat_prior_needs_invertible_r():
    with pytest.raises(NonSPD):
        optimal_policy_rule(constant_model(R=0.0, reference=Flat()))


def test_zero_b_gives_zero_mean():
    rule = optimal_policy_rule(constant_model(B=0.0))
    assert np.all(rule.gain == 0.0)
    assert np.all(rule.mean(np.full((3, 1001, 1), 5.0)) == 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10_000))
def test_optimal_rule_formulas(p, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(p, p))
    R = M @ M.T
    B = rng.normal(size=(2, p))
    sigma = float(rng.uniform(0.2, 2.0))
    m = constant_model(A=np.zeros((2, 2)), B=B, C=np.zeros((2, 2)), H=np.zeros((2, 2)), N=np.zeros((2, 2)), R=R, G=np.zeros((2, 2)), xi=[1.0, 0.0], sigma=sigma, n_steps=5)
    rule = optimal_policy_rule(m)
    W = R + 0.5 * sigma**2 * np.eye(p)
    assert np.allclose(rule.Sigma[0], 0.5 * sigma**2 * np.linalg.inv(W), atol=1e-12)
    assert np.allclose(rule.gain[0], -np.linalg.solve(W, B.T), atol=1e-12)


def test_zero_derivative_recovers_prior():
    u = reference_values(StandardGaussian(), GRID)
    mu = gibbs_density(GRID, np.zeros(GRID.n_points), u, 1.0)
    assert np.max(np.abs(mu.values - stats.norm.pdf(GRID.points))) < 1e-10


def test_lq_derivative_gives_half_variance_gaussian():
    u = reference_values(StandardGaussian(), GRID)
    h = HamiltonianDerivativeSpec(c1=0.0, c2=0.25).evaluate(GRID.points)
    mu = gibbs_density(GRID, h, u, 1.0)
    assert np.max(np.abs(mu.values - stats.norm.pdf(GRID.points, scale=math.sqrt(0.5)))) < 1e-6


def test_constant_shift_leaves_density_unchanged():
    u = reference_values(StandardGaussian(), GRID)
    h = 0.3 * GRID.points + 0.2 * GRID.points**2
    a = gibbs_density(GRID, h, u, 1.0)
    b = gibbs_density(GRID, h + 7.0, u, 1.0)
    assert np.max(np.abs(a.values - b.values)) < 1e-12


def test_density_is_normalized():
    u = reference_values(StandardGaussian(), GRID)
    mu = gibbs_density(GRID, np.sin(GRID.points), u, 0.7)
    assert np.all(mu.values >= 0)
    assert GRID.integrate(mu.values) == pytest.approx(1.0, abs=1e-10)


def test_heavy_tails_rejected():
    grid = ControlGrid(-2.0, 2.0, 401)
    with pytest.raises(TailMassError):
        gibbs_density(grid, np.zeros(grid.n_points), reference_values(StandardGaussian(), grid), 1.0)


def test_lagrange_beta_half_variance_case():
    u = reference_values(StandardGaussian(), GRID)
    h = HamiltonianDerivativeSpec(c2=0.25).evaluate(GRID.points)
    rep = lagrange_beta(GRID, h, u, 1.0)
    assert rep.beta == pytest.approx(0.5 * (math.log(1 / math.sqrt(2)) - 1), abs=1e-9)
    assert rep.residual_sup <= 1e-8


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_lagrange_beta_prior_case(sigma):
    grid = ControlGrid(-12.0, 12.0, 4001)
    rep = lagrange_beta(grid, np.zeros(grid.n_points), reference_values(StandardGaussian(), grid), sigma)
    assert rep.beta == pytest.approx(-0.5 * sigma**2, abs=1e-10)


def test_lagrange_residual_small_for_arbitrary_input():
    rng = np.random.default_rng(0)
    u = reference_values(StandardGaussian(), GRID)
    h = rng.normal(size=GRID.n_points) * 0.1 + 0.1 * GRID.points**2
    assert lagrange_beta(GRID, h, u, 0.8).residual_sup <= 1e-8


def test_beta_shift_invariance():
    u = reference_values(StandardGaussian(), GRID)
    h = 0.4 * GRID.points + 0.3 * GRID.points**2
    a = lagrange_beta(GRID, h, u, 1.0)
    b = lagrange_beta(GRID, h + 2.5, u, 1.0)
    assert b.beta == pytest.approx(a.beta - 2.5, abs=1e-10)
    assert abs(b.residual_sup - a.residual_sup) < 1e-10


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0.05, 2.0),
    st.floats(-2.0, 2.0),
    st.floats(0.3, 2.0),
    st.floats(-2.0, 2.0),
    st.booleans(),
)
def test_gibbs_matches_gaussian_rule(R, B, sigma, P, flat):
    reference = Flat() if flat else StandardGaussian()
    m = constant_model(B=B, R=R, sigma=sigma, reference=reference, n_steps=2)
    rule = optimal_policy_rule(m)
    S = rule.Sigma[0, 0, 0]
    mean = rule.gain[0, 0, 0] * P
    grid = ControlGrid.around(mean, math.sqrt(S), 8.0, 100)
    h = HamiltonianDerivativeSpec.from_lq(m, [P]).evaluate(grid.points)
    mu = gibbs_density(grid, h, reference_values(reference, grid), sigma)
    exact = np.exp(gaussian_log_density(grid.points, mean, [[S]]))
    assert np.max(np.abs(mu.values - exact)) <= 1e-5 * max(1.0, exact.max())
    rep = lagrange_beta(grid, h, reference_values(reference, grid), sigma)
    assert rep.beta == pytest.approx(gaussian_lagrange_beta(m, [P], 0), abs=1e-8)


def test_fixed_point_without_coupling_is_one_step():
    res = gibbs_fixed_point(HamiltonianDerivativeSpec(c1=0.5, c2=0.5), StandardGaussian(), 1.0, damping=1.0)
    assert res.iterations == 1


def mean_scan_oracle(c1, c2, d1, sigma, step=1e-4):
    """Brute-force: the candidate mean whose Gibbs density reproduces it."""
    a = np.linspace(-10, 10, 8001)
    w = np.full(a.size, a[1] - a[0])
    w[[0, -1]] *= 0.5
    cands = np.arange(-1.0, 1.0 + step / 2, step)
    e = -0.5 * a**2 - (2 / sigma**2) * ((c1 + d1 * cands[:, None]) * a + c2 * a**2)
    dens = np.exp(e - e.max(axis=1, keepdims=True))
    means = (dens * a) @ w / (dens @ w)
    return cands[np.argmin(np.abs(means - cands))]


def test_fixed_point_with_mean_coupling():
    res = gibbs_fixed_point(HamiltonianDerivativeSpec(c1=0.5, c2=0.5, d1=0.1), StandardGaussian(), 1.0, damping=0.5)
    assert res.density.mean() == pytest.approx(mean_scan_oracle(0.5, 0.5, 0.1, 1.0), abs=1e-4)
    assert res.density.mean() == pytest.approx(-0.3125, abs=1e-8)
    assert res.lagrange.residual_sup <= 1e-8


def test_oscillating_fixed_point_needs_damping():
    spec = HamiltonianDerivativeSpec(c1=0.5, c2=0.5, d1=1.5)
    with pytest.raises(NoConvergence) as e:
        gibbs_fixed_point(spec, StandardGaussian(), 1.0, damping=1.0, max_iter=200)
    assert e.value.max_iter == 200
    res = gibbs_fixed_point(spec, StandardGaussian(), 1.0, damping=0.25)
    assert res.gap < 1e-10


def test_flat_prior_needs_explicit_grid():
    with pytest.raises(ValueError):
        default_control_grid(Flat())
