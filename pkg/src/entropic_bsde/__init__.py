"""Entropy-regularized backward stochastic control: LQ pipeline and checks."""

from __future__ import annotations

__version__ = "0.1.0"

from .bsde import PhiSolution, solve_linear_bsde_regression, solve_phi
from .evaluate import cost_monte_carlo, cost_of_exploration, cost_quadrature
from .model import (
    AffineInBrownian,
    CoefficientPath,
    ControlGrid,
    CostReport,
    Deterministic,
    Flat,
    GridDensity,
    GridPotential,
    LQModel,
    StandardGaussian,
    TimeGrid,
    constant_model,
    entropy_grid,
    kl_gaussian,
    validate_model,
)
from .policy import (
    GaussianPolicyRule,
    HamiltonianDerivativeSpec,
    gibbs_density,
    gibbs_fixed_point,
    lagrange_beta,
    optimal_policy_rule,
)
from .riccati import RiccatiSolution, solve_riccati
from .simulate import SimulatedEnsemble, sample_policy_actions, simulate_hamiltonian_system

__all__ = [
    "AffineInBrownian",
    "CoefficientPath",
    "ControlGrid",
    "CostReport",
    "Deterministic",
    "Flat",
    "GaussianPolicyRule",
    "GridDensity",
    "GridPotential",
    "HamiltonianDerivativeSpec",
    "LQModel",
    "PhiSolution",
    "RiccatiSolution",
    "SimulatedEnsemble",
    "StandardGaussian",
    "TimeGrid",
    "constant_model",
    "cost_monte_carlo",
    "cost_of_exploration",
    "cost_quadrature",
    "entropy_grid",
    "gibbs_density",
    "gibbs_fixed_point",
    "kl_gaussian",
    "lagrange_beta",
    "optimal_policy_rule",
    "sample_policy_actions",
    "simulate_hamiltonian_system",
    "solve_linear_bsde_regression",
    "solve_phi",
    "solve_riccati",
    "validate_model",
]
