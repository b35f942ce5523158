from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from entropic_bsde.bsde import LinearDriver, phi_driver, solve_linear_bsde_regression, solve_phi
from entropic_bsde.errors import IllConditionedRegression
from entropic_bsde.model import constant_model
from entropic_bsde.riccati import solve_riccati


def zero_driver(m):
    K, n = m.grid.n_steps, m.n
    return LinearDriver(np.zeros((K + 1, n, n)), np.zeros((K + 1, n, n)), np.zeros((K + 1, n)))


def phi_oracle(m):
    """(alpha_0, beta_0) by integrating Theta, beta and alpha jointly with scipy."""
    A, B, C, H, N, R = (float(getattr(m, k).values[0, 0, 0]) for k in "ABCHNR")
    bwb = B * B / (R + 0.5 * m.sigma**2)

    def rhs(t, y):
        th, be, al = y
        res = 1.0 / (1.0 + th * N)
        return [2 * A * th + H * th * th - bwb - C * C * th * res, (A + th * H) * be, (A + th * H) * al + C * res * be]

    y0 = [0.0, float(m.terminal.q[0]), float(m.terminal.c[0])]
    sol = solve_ivp(rhs, (m.grid.t_end, 0.0), y0, method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[2, -1], sol.y[1, -1]


def _solve(m):
    return solve_phi(m, solve_riccati(m))


def test_zero_drift_keeps_terminal_constant():
    ph = _solve(constant_model(A=0.0, H=0.0, C=0.8, xi=2.5))
    assert np.all(ph.phi_alpha == 2.5)
    assert np.all(ph.eta == 0.0)


def test_exponential_closed_form():
    ph = _solve(constant_model(A=1.0))
    t = ph.grid.knots
    assert np.max(np.abs(ph.phi_alpha[:, 0] - np.exp(t - 1))) < 1e-10
    assert ph.phi_alpha[0, 0] == pytest.approx(math.exp(-1), abs=1e-10)


def test_brownian_terminal_closed_form():
    ph = _solve(constant_model(C=1.0, xi=0.0, q=1.0))
    t = ph.grid.knots
    assert np.all(ph.phi_beta == 1.0)
    assert np.max(np.abs(ph.phi_alpha[:, 0] + (1 - t))) < 1e-12


def test_terminal_values_exact():
    ph = _solve(constant_model(A=0.3, C=0.5, H=0.5, N=0.2, xi=0.7, q=-0.4))
    assert ph.phi_alpha[-1, 0] == 0.7 and ph.phi_beta[-1, 0] == -0.4


def test_beta_vanishes_without_brownian_loading():
    ph = _solve(constant_model(A=0.3, C=0.5, H=0.5, N=0.2, xi=0.7, q=0.0))
    assert np.all(ph.phi_beta == 0.0)


@pytest.mark.parametrize("kw", [dict(A=0.3, C=0.5, H=0.5, N=0.2, xi=0.5, q=1.0), dict(A=-0.8, C=1.2, H=1.0, N=0.7, B=2.0, xi=-1.0, q=0.3, t_end=2.0)])
def test_phi_matches_adaptive_integrator(kw):
    m = constant_model(n_steps=500, **kw)
    ph = _solve(m)
    alpha0, beta0 = phi_oracle(m)
    assert ph.phi_alpha[0, 0] == pytest.approx(alpha0, abs=1e-9)
    assert ph.phi_beta[0, 0] == pytest.approx(beta0, abs=1e-9)


def test_regression_constant_terminal():
    m = constant_model(xi=1.5, n_steps=50)
    r = solve_linear_bsde_regression(m, zero_driver(m), n_paths=10_000, seed=1)
    assert np.max(np.abs(r.Y - 1.5)) < 1e-3
    assert np.max(np.abs(r.Z)) < 1e-3


def _replicates(m, driver, seeds, n_paths=4000):
    runs = [solve_linear_bsde_regression(m, driver, n_paths=n_paths, seed=s) for s in seeds]
    y0 = np.array([r.Y[:, 0, 0].mean() for r in runs])
    z = np.array([r.Z[:, :, 0].mean() for r in runs])
    return runs, y0, z


def test_regression_martingale_representation():
    m = constant_model(xi=0.0, q=1.0, n_steps=50)
    runs, y0, z = _replicates(m, zero_driver(m), range(8))
    se_y = y0.std(ddof=1) / math.sqrt(len(y0))
    se_z = z.std(ddof=1) / math.sqrt(len(z))
    assert abs(y0.mean()) <= 3 * se_y + 1e-12
    assert abs(z.mean() - 1.0) <= 3 * se_z
    r = runs[0]
    assert np.sqrt(np.mean((r.Y[:, :, 0] - r.brownian.W) ** 2)) < 0.05


def test_regression_agrees_with_ansatz():
    m = constant_model(A=0.3, C=0.5, H=0.5, N=0.2, xi=0.5, q=1.0, n_steps=50)
    th = solve_riccati(m)
    ph = solve_phi(m, th)
    _, y0, z = _replicates(m, phi_driver(m, th), range(8))
    se = y0.std(ddof=1) / math.sqrt(len(y0))
    assert abs(y0.mean() - ph.phi_alpha[0, 0]) <= 3 * se


def test_regression_terminal_match():
    m = constant_model(xi=0.5, q=1.0, n_steps=20)
    r = solve_linear_bsde_regression(m, zero_driver(m), n_paths=2000, seed=3)
    assert np.allclose(r.Y[:, -1, 0], 0.5 + r.brownian.W[:, -1])


def test_regression_rejects_small_samples():
    m = constant_model(n_steps=10)
    with pytest.raises(ValueError):
        solve_linear_bsde_regression(m, zero_driver(m), n_paths=999)


def test_regression_detects_ill_conditioning():
    m = constant_model(xi=0.0, q=1.0, n_steps=5)
    with pytest.raises(IllConditionedRegression):
        solve_linear_bsde_regression(m, zero_driver(m), n_paths=1000, degree=40)


def test_regression_deterministic_given_seed():
    m = constant_model(A=0.3, xi=0.5, q=1.0, n_steps=10)
    d = zero_driver(m)
    a = solve_linear_bsde_regression(m, d, n_paths=1000, seed=9)
    b = solve_linear_bsde_regression(m, d, n_paths=1000, seed=9)
    assert np.array_equal(a.Y, b.Y) and np.array_equal(a.Z, b.Z)
