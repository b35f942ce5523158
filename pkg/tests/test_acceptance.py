"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from conftest import noisy_planar, noisy_scalar, pipeline
from entropic_bsde.cli import main
from entropic_bsde.evaluate import cost_of_exploration
from entropic_bsde.model import (
    CoefficientPath,
    ControlGrid,
    Deterministic,
    Flat,
    LQModel,
    StandardGaussian,
    TimeGrid,
    constant_model,
    validate_model,
)
from entropic_bsde.policy import (
    HamiltonianDerivativeSpec,
    gaussian_log_density,
    gibbs_density,
    lagrange_beta,
    optimal_policy_rule,
    reference_values,
)
from entropic_bsde.riccati import solve_riccati
from entropic_bsde.verify import (
    degeneration_check,
    duality_identity_check,
    epsilon_rate_check,
    hamiltonian_stationarity_check,
    lln_exploratory_check,
    optimality_check,
)


@pytest.fixture
def report(capsys):
    def emit(number: int, title: str, passed: bool, detail: str, elapsed: float, limit: float | None):
        timing = f"{elapsed:.2f}s" + (f" (limit {limit:g}s)" if limit else "")
        ok = passed and (limit is None or elapsed < limit)
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number} [{title}]: {detail}; {timing}")
        assert passed, detail
        if limit is not None:
            assert elapsed < limit, f"runtime {elapsed:.2f}s exceeds {limit}s"

    return emit


def stationary_planar(**kw):
    """Two-dimensional model whose adjoint has no diffusion."""
    return noisy_planar(C=np.zeros((2, 2)), N=np.zeros((2, 2)), q=None, **kw)


def _random_spd(rng, p):
    M = rng.normal(size=(p, p))
    return M @ M.T + 0.1 * np.eye(p)


def _flat_model(rng, sigma, p, t_end):
    """Flat prior with a random SPD, time-varying control weight."""
    grid = TimeGrid(t_end, 200)
    R0, R1 = _random_spd(rng, p), _random_spd(rng, p)
    R = CoefficientPath.piecewise_linear([0.0, t_end], np.stack([R0, R1]), grid)
    zeros = lambda r, c: CoefficientPath.constant(np.zeros((r, c)), grid)
    m = LQModel(
        A=zeros(1, 1),
        B=CoefficientPath.constant(rng.normal(size=(1, p)), grid),
        C=zeros(1, 1),
        H=zeros(1, 1),
        N=zeros(1, 1),
        R=R,
        G=np.zeros((1, 1)),
        sigma=sigma,
        terminal=Deterministic(np.ones(1)),
        reference=Flat(),
        grid=grid,
    )
    return validate_model(m)


def test_criterion_1_coe_identity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for sigma, p, t_end in ((1.0, 1, 1.0), (1.0, 2, 1.0), (0.5, 3, 2.0)):
        for _ in range(5):
            m = _flat_model(rng, sigma, p, t_end)
            coe = cost_of_exploration(m, optimal_policy_rule(m).Sigma)
            worst = max(worst, abs(coe - sigma**2 * p * t_end / 4))
    report(1, "COE identity", worst <= 1e-10, f"max |COE - sigma^2 p T/4| = {worst:.2e} (tol 1e-10)", time.perf_counter() - t0, 1.0)


def test_criterion_2_riccati_oracle(report):
    t0 = time.perf_counter()
    th = solve_riccati(constant_model())
    err_linear = np.max(np.abs(th.theta[:, 0, 0] - (1 - th.grid.knots)))
    th = solve_riccati(constant_model(A=1.0))
    err_exp = np.max(np.abs(th.theta[:, 0, 0] - 0.5 * (1 - np.exp(2 * (th.grid.knots - 1)))))
    errs = []
    for n in (10, 20, 40):
        th = solve_riccati(constant_model(A=1.0, n_steps=n))
        errs.append(np.max(np.abs(th.theta[:, 0, 0] - 0.5 * (1 - np.exp(2 * (th.grid.knots - 1))))))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    ok = max(err_linear, err_exp) <= 1e-8 and min(orders) >= 3.8
    detail = f"closed-form errors {err_linear:.1e}, {err_exp:.1e} (tol 1e-8); observed orders {orders[0]:.3f}, {orders[1]:.3f} (min 3.8)"
    report(2, "Riccati oracle", ok, detail, time.perf_counter() - t0, 1.0)


def test_criterion_3_gaussian_gibbs_equivalence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    sup_gap = sup_res = 0.0
    for _ in range(10):
        m = constant_model(
            A=rng.normal(),
            B=rng.normal(),
            C=rng.normal() * 0.5,
            H=rng.uniform(0, 1),
            N=rng.uniform(0, 1),
            R=rng.uniform(0.05, 2),
            G=rng.uniform(0, 1),
            sigma=rng.uniform(0.3, 2),
            n_steps=100,
        )
        rule = optimal_policy_rule(m)
        for P in rng.normal(size=3):
            k = int(rng.integers(0, m.grid.n_knots))
            S = rule.Sigma[k, 0, 0]
            mean = rule.gain[k, 0, 0] * P
            grid = ControlGrid.around(mean, math.sqrt(S), 8.0, 100)
            h = HamiltonianDerivativeSpec.from_lq(m, [P], k).evaluate(grid.points)
            u = reference_values(StandardGaussian(), grid)
            mu = gibbs_density(grid, h, u, m.sigma)
            exact = np.exp(gaussian_log_density(grid.points, mean, [[S]]))
            sup_gap = max(sup_gap, float(np.max(np.abs(mu.values - exact))))
            sup_res = max(sup_res, lagrange_beta(grid, h, u, m.sigma).residual_sup)
    ok = sup_gap <= 1e-5 and sup_res <= 1e-8
    detail = f"sup |Gibbs - Gaussian| = {sup_gap:.2e} (tol 1e-5); residual_sup = {sup_res:.2e} (tol 1e-8)"
    report(3, "Gaussian-Gibbs equivalence", ok, detail, time.perf_counter() - t0, 5.0)


def test_criterion_4_stationarity(report):
    t0 = time.perf_counter()
    stats = []
    for m in (constant_model(), noisy_scalar(), noisy_planar()):
        _, _, ens = pipeline(m, n_paths=10)
        stats.append(hamiltonian_stationarity_check(ens, m, n_paths=10).statistic)
    ok = max(stats) <= 1e-8
    report(4, "Hamiltonian stationarity", ok, f"sup residuals {', '.join(f'{s:.1e}' for s in stats)} (tol 1e-8)", time.perf_counter() - t0, 10.0)


def test_criterion_5_optimality(report):
    t0 = time.perf_counter()
    lines, ok = [], True
    for name, m in (("noise-degenerate", constant_model(A=0.2, H=0.5, G=1.0)), ("scalar", noisy_scalar()), ("planar", noisy_planar())):
        rep = optimality_check(m, n_paths=10_000, seed=42)
        rows = rep.details["perturbations"]
        strictly_worse = all(r["difference"] > 0 for r in rows)
        ok &= rep.passed and strictly_worse and len(rows) >= 20
        lines.append(f"{name}: {len(rows)} perturbations, min increase {min(r['difference'] for r in rows):.2e}")
    report(5, "optimality", ok, "; ".join(lines), time.perf_counter() - t0, 60.0)


def test_criterion_6_duality(report):
    t0 = time.perf_counter()
    lines, ok = [], True
    shift = lambda m: 0.1 + 0.2 * np.sin(2 * np.pi * m.grid.knots)[:, None] * np.ones(m.p)
    stochastic = (noisy_scalar(), noisy_planar(), noisy_scalar(A=-0.5, C=1.0, H=1.0, N=0.5, G=0.3, q=-1.0))
    for m in stochastic:
        _, _, ens = pipeline(m, n_paths=10_000, seed=42)
        rep = duality_identity_check(m, ens, shift(m))
        se = rep.details["std_error"]
        ok &= abs(rep.statistic) <= 3 * se
        lines.append(f"{rep.statistic:+.2e} (3 SE {3 * se:.1e})")
    for m in (constant_model(G=1.0), constant_model(A=0.4, H=0.5, G=1.0), stationary_planar()):
        _, _, ens = pipeline(m, n_paths=10_000, seed=42)
        rep = duality_identity_check(m, ens, shift(m))
        ok &= abs(rep.statistic) <= 1e-10
        lines.append(f"{rep.statistic:+.1e} (exact, tol 1e-10)")
    report(6, "duality identity", ok, "; ".join(lines), time.perf_counter() - t0, 60.0)


def test_criterion_7_degeneration(report):
    t0 = time.perf_counter()
    sigmas = [0.4, 0.2, 0.1]
    flat = degeneration_check(constant_model(reference=Flat()), sigmas)
    gauss = degeneration_check(constant_model(), sigmas)
    flat_gaps = [r["gain_gap"] for r in flat.details["table"]]
    gauss_gaps = [r["gain_gap"] for r in gauss.details["table"]]
    # K = -1/(R + sigma^2/2) against K0 = -1/R with R = 0.5, B = 1
    exact = [abs(1 / (0.5 + s * s / 2) - 1 / 0.5) for s in sigmas]
    gap_err = max(max(abs(g) for g in flat_gaps), max(abs(g - e) for g, e in zip(gauss_gaps, exact)))
    ok = flat.passed and abs(flat.statistic - 2.0) <= 0.05 and gap_err <= 1e-10
    detail = f"COE slope {flat.statistic:.6f} (2 +- 0.05); gain gaps {', '.join(f'{g:.6f}' for g in gauss_gaps)}, max error {gap_err:.1e} (tol 1e-10)"
    report(7, "degeneration", ok, detail, time.perf_counter() - t0, 5.0)


def test_criterion_8_lln(report):
    t0 = time.perf_counter()
    rep = lln_exploratory_check(constant_model(), path_counts=(100, 1_000, 10_000, 100_000), n_seeds=10)
    report(8, "LLN exploratory dynamics", rep.passed, f"slope {rep.statistic:.4f} (-0.5 +- 0.1)", time.perf_counter() - t0, 30.0)


def test_criterion_9_epsilon_rate(report):
    t0 = time.perf_counter()
    slopes = [
        epsilon_rate_check(constant_model(G=1.0), 0.1).statistic,
        epsilon_rate_check(noisy_scalar(), np.cos(3 * np.linspace(0, 1, 1001))[:, None]).statistic,
    ]
    ok = all(abs(s - 2.0) <= 0.1 for s in slopes)
    report(9, "epsilon rate", ok, f"slopes {', '.join(f'{s:.4f}' for s in slopes)} (2 +- 0.1)", time.perf_counter() - t0, 5.0)


def test_criterion_10_reproducibility(report, tmp_path):
    t0 = time.perf_counter()
    config = {
        "model": {"A": 0.3, "C": 0.3, "H": 0.5, "N": 0.2, "G": 1.0, "terminal": {"type": "affine", "c": 1.0, "q": 0.5}},
        "grid": {"t_end": 1, "n_steps": 200},
        "run": {"n_paths": 2000, "seed": 42},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    codes = [main(["all", str(path), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    codes.append(main(["all", str(path), "--out", str(tmp_path / "c"), "--seed", "7"]))
    a, b, c = (tmp_path / d for d in "abc")
    names = sorted(p.name for p in a.iterdir())
    identical = names == sorted(p.name for p in b.iterdir()) and all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    ma, mc = (json.loads((d / "manifest.json").read_text()) for d in (a, c))
    same_outcomes = ma["checks"] == mc["checks"]
    cost_a, cost_c = (json.loads((d / "cost.json").read_text())["monte_carlo"]["total"] for d in (a, c))
    moved = cost_a != cost_c
    ok = identical and same_outcomes and moved and codes[0] == codes[1] == codes[2]
    detail = f"{len(names)} artifacts byte-identical: {identical}; outcomes unchanged under a new seed: {same_outcomes}; MC cost moved {cost_a:.6f} -> {cost_c:.6f}"
    report(10, "reproducibility", ok, detail, time.perf_counter() - t0, None)
