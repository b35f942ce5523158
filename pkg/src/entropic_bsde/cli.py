"""Command-line entry point.

    entropic-bsde <command> CONFIG [--out DIR] [--seed N]
    entropic-bsde verify <check> CONFIG

Exit codes: 0 success, 1 configuration or model error, 2 failed
verification, 3 numerical error.
"""

from __future__ import annotations

import argparse
import sys
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (
    sha256_file,
    write_csv,
    write_json,
    write_matrix_series,
)
from .bsde import solve_phi
from .config import SEED_ENV, ConfigError, ExperimentConfig, parse_coefficient, load_config
from .errors import EntropicBSDEError, GridMismatch, ModelError, NumericalError
from .evaluate import cost_monte_carlo, cost_of_exploration, cost_quadrature, integrand_means
from .model import ControlGrid, Flat, GridDensity, StandardGaussian, adjoint_is_deterministic
from .policy import (
    HamiltonianDerivativeSpec,
    default_control_grid,
    gibbs_fixed_point,
    optimal_policy_rule,
    reference_values,
)
from .riccati import solve_riccati
from .simulate import forward_state_error, initial_adjoint, simulate_hamiltonian_system
from .verify import (
    CheckReport,
    degeneration_check,
    duality_identity_check,
    epsilon_rate_check,
    hamiltonian_stationarity_check,
    lln_exploratory_check,
    mp_inequality_check,
    optimality_check,
)

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_NUMERICAL = 0, 1, 2, 3
MAX_DUMP_PATHS = 100
CHECKS = ("mp_inequality", "stationarity", "duality", "degeneration", "lln", "epsilon_rate", "optimality")


class Run:
    """Lazily computed pipeline stages for one configuration."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.m = cfg.model
        self.opts = cfg.run
        self.out = cfg.output_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def opt(self, key, default):
        return self.opts.get(key, default)

    @cached_property
    def theta(self):
        return solve_riccati(self.m)

    @cached_property
    def phi(self):
        return solve_phi(self.m, self.theta)

    @cached_property
    def rule(self):
        return optimal_policy_rule(self.m)

    @cached_property
    def ensemble(self):
        return simulate_hamiltonian_system(
            self.m, self.theta, self.phi, self.cfg.n_paths, self.cfg.seed, n_workers=int(self.opt("n_workers", 1))
        )

    def shift(self) -> np.ndarray:
        spec = self.opt("shift", 0.1)
        K1, p = self.m.grid.n_knots, self.m.p
        if isinstance(spec, dict):
            return parse_coefficient(spec, p, 1, self.m.grid, "run.shift").values[:, :, 0]
        try:
            arr = np.asarray(spec, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("expected numbers", "run.shift") from None
        if arr.size not in (1, p):
            raise ConfigError(f"expected a number or {p} numbers", "run.shift")
        return np.broadcast_to(arr.reshape(-1), (K1, p)).copy() if arr.size == p else np.full((K1, p), float(arr))

    def path(self, name: str) -> Path:
        p = self.out / name
        self.written.append(p)
        return p

    # -- commands -----------------------------------------------------------

    def riccati(self):
        write_matrix_series(self.path("theta.csv"), self.m.grid.knots, [("theta", self.theta.theta)])

    def phi_cmd(self):
        write_matrix_series(
            self.path("phi.csv"), self.m.grid.knots, [("alpha", self.phi.phi_alpha), ("beta", self.phi.phi_beta)]
        )

    def simulate(self):
        ens = self.ensemble
        t = self.m.grid.knots
        k = min(MAX_DUMP_PATHS, int(self.opt("dump_paths", MAX_DUMP_PATHS)), ens.n_paths)
        for name in ("P", "Y", "Z", "v"):
            arr = getattr(ens, name)
            for c in range(arr.shape[2]):
                header = ["t"] + [f"path_{i}" for i in range(k)]
                write_csv(self.path(f"paths_{name}_{c + 1}.csv"), header, [t] + [arr[i, :, c] for i in range(k)])
        summary = ens.summary()
        summary["seed"] = self.cfg.seed
        summary["forward_state_error"] = forward_state_error(self.m, ens)
        write_json(self.path("simulation_summary.json"), summary)

    def policy(self, gibbs: bool = False):
        r = self.rule
        write_matrix_series(self.path("policy.csv"), self.m.grid.knots, [("Sigma", r.Sigma), ("K", r.gain)])
        if gibbs:
            res, grid, _ = self.gibbs()
            write_csv(self.path("gibbs_density.csv"), ["a", "mu"], [grid.points, res.density.values])
            write_json(
                self.path("lagrange.json"),
                {**res.lagrange.to_dict(), "iterations": res.iterations, "l1_gap": res.gap, "mean": res.density.mean()},
            )

    def gibbs(self):
        g = self.opt("gibbs", {})
        m = self.m
        custom = any(k in g for k in ("c0", "c1", "c2", "d1"))
        P0 = initial_adjoint(m, self.theta, self.phi)
        if custom:
            spec = HamiltonianDerivativeSpec(*(float(g.get(k, 0.0)) for k in ("c0", "c1", "c2", "d1")))
        else:
            spec = HamiltonianDerivativeSpec.from_lq(m, P0, 0)
        n_points = int(g.get("n_points", 2001))
        if "a_min" in g or "a_max" in g:
            grid = ControlGrid(float(g["a_min"]), float(g["a_max"]), n_points)
        elif isinstance(m.reference, Flat) and not custom:
            # the flat prior has no scale, but the LQ Gibbs measure is the known Gaussian
            sd = float(np.sqrt(self.rule.Sigma[0, 0, 0]))
            grid = ControlGrid.around(float(self.rule.gain[0] @ P0), sd, 10.0, (n_points - 1) // 20)
        else:
            grid = default_control_grid(m.reference, n_points)
        res = gibbs_fixed_point(
            spec,
            m.reference,
            m.sigma,
            grid=grid,
            damping=float(g.get("damping", 0.5)),
            tol=float(g.get("tol", 1e-10)),
            max_iter=int(g.get("max_iter", 1000)),
        )
        return res, grid, spec

    def cost(self, dump: bool = False):
        rep = cost_monte_carlo(self.m, self.ensemble, self.rule)
        out = {"monte_carlo": rep.to_dict(), "seed": self.cfg.seed}
        if adjoint_is_deterministic(self.m):
            out["quadrature"] = cost_quadrature(self.m, self.ensemble.v[0], self.rule.Sigma).to_dict()
        write_json(self.path("cost.json"), out)
        if dump:
            means = integrand_means(self.m, self.ensemble, self.rule)
            names = list(means)
            write_csv(self.path("cost_integrands.csv"), ["t"] + names, [self.m.grid.knots] + [means[k] for k in names])

    def coe(self):
        write_json(self.path("coe.json"), {"coe": cost_of_exploration(self.m, self.rule.Sigma)})

    def verify(self, check: str) -> CheckReport:
        rep = getattr(self, f"check_{check}")()
        d = rep.to_dict()
        d["seed"] = self.cfg.seed
        write_json(self.path(f"verify_{check}.json"), d)
        return rep

    # -- checks -------------------------------------------------------------

    def check_mp_inequality(self):
        res, grid, spec = self.gibbs()
        mu = res.density
        a = grid.points
        u = reference_values(self.m.reference, grid)
        h = spec.evaluate(a, mu.mean())
        mean, sd = mu.mean(), float(np.sqrt(mu.variance()))
        tests = []
        for dm in (-0.5, 0.0, 0.5):
            for r in (0.5, 1.0, 2.0):
                s = sd * np.sqrt(r)
                tests.append(GridDensity.from_unnormalized(grid, np.exp(-0.5 * ((a - mean - dm * sd) / s) ** 2)))
        if isinstance(self.m.reference, StandardGaussian):
            tests.append(GridDensity.from_unnormalized(grid, np.exp(-0.5 * a * a)))
        return mp_inequality_check(mu, h, u, self.m.sigma, tests)

    def check_stationarity(self):
        n = int(self.opt("stationarity_paths", 10))
        ens = simulate_hamiltonian_system(self.m, self.theta, self.phi, min(n, self.cfg.n_paths), self.cfg.seed)
        return hamiltonian_stationarity_check(ens, self.m, self.rule, n_paths=n)

    def check_duality(self):
        return duality_identity_check(self.m, self.ensemble, self.shift())

    def check_degeneration(self):
        return degeneration_check(self.m, self.opt("sigmas", [0.1, 0.05, 0.025]))

    def check_lln(self):
        counts = self.opt("path_counts", [100, 1_000, 10_000, 100_000])
        P = self.ensemble.P[0, 0]
        return lln_exploratory_check(self.m, self.rule, counts, self.cfg.seed, n_seeds=int(self.opt("lln_seeds", 10)), P=P)

    def check_epsilon_rate(self):
        return epsilon_rate_check(self.m, self.shift(), self.opt("epsilons", [0.1, 0.05, 0.025]))

    def check_optimality(self):
        return optimality_check(self.m, ens=self.ensemble, n_shifts=int(self.opt("n_shifts", 18)))


def _run_all(run: Run) -> int:
    run.riccati()
    run.phi_cmd()
    run.simulate()
    run.policy(gibbs=run.m.p == 1)
    run.cost(dump=True)
    run.coe()
    results = {}
    for check in CHECKS:
        if check == "mp_inequality" and run.m.p != 1:
            results[check] = {"skipped": "the grid Gibbs layer needs a one-dimensional control"}
            continue
        try:
            results[check] = {"pass": run.verify(check).passed}
        except (ModelError, NumericalError, GridMismatch) as e:
            results[check] = {"skipped": str(e)}
    files = {p.name: sha256_file(p) for p in sorted(set(run.written), key=lambda p: p.name)}
    manifest = {
        "version": __version__,
        "config_sha256": run.cfg.config_sha256,
        "seed": run.cfg.seed,
        "seed_source": run.cfg.seed_source,
        "seed_env_var": SEED_ENV,
        "n_paths": run.cfg.n_paths,
        "n_steps": run.m.grid.n_steps,
        "checks": results,
        "files": files,
    }
    write_json(run.out / "manifest.json", manifest)
    failed = any(r.get("pass") is False for r in results.values())
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="entropic-bsde", description="Entropy-regularized LQ BSDE control toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        return p

    cmds = {
        "riccati": "solve the Riccati equation (theta.csv)",
        "phi": "solve the decoupling BSDE (phi.csv)",
        "simulate": "simulate the Hamiltonian system (path CSVs + summary JSON)",
        "policy": "optimal Gaussian policy (policy.csv); --gibbs adds the fixed point",
        "cost": "Monte-Carlo cost of the optimal policy (cost.json)",
        "coe": "cost of exploration (coe.json)",
        "all": "full pipeline with every check and a manifest",
    }
    for name, help_ in cmds.items():
        p = add(name, help_)
        if name == "policy":
            p.add_argument("--gibbs", action="store_true", help="run the 1-D Gibbs fixed point")
        if name == "cost":
            p.add_argument("--dump", action="store_true", help="write per-knot integrand means")
        p.add_argument("config")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="master seed (overrides config and environment)")
    p = add("verify", "run one verification check (exit 2 on failure)")
    p.add_argument("check", choices=CHECKS)
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, output_dir=args.out)
        run = Run(cfg)
        cmd = args.command
        if cmd == "riccati":
            run.riccati()
        elif cmd == "phi":
            run.phi_cmd()
        elif cmd == "simulate":
            run.simulate()
        elif cmd == "policy":
            run.policy(gibbs=args.gibbs)
        elif cmd == "cost":
            run.cost(dump=args.dump)
        elif cmd == "coe":
            run.coe()
        elif cmd == "verify":
            rep = run.verify(args.check)
            status = "PASS" if rep.passed else "FAIL"
            print(f"{status} {rep.name}: statistic={rep.statistic} tolerance={rep.tolerance}")
            return EXIT_OK if rep.passed else EXIT_VERIFY
        elif cmd == "all":
            code = _run_all(run)
            print(f"wrote {len(run.written) + 1} artifacts to {run.out}")
            return code
        for p in run.written:
            print(p)
        return EXIT_OK
    except (NumericalError, GridMismatch) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ModelError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except EntropicBSDEError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
