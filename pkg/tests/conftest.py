from __future__ import annotations

import numpy as np
import pytest

from entropic_bsde.bsde import solve_phi
from entropic_bsde.model import constant_model
from entropic_bsde.riccati import solve_riccati
from entropic_bsde.simulate import simulate_hamiltonian_system


def pipeline(m, n_paths=1000, seed=7):
    th = solve_riccati(m)
    ph = solve_phi(m, th)
    return th, ph, simulate_hamiltonian_system(m, th, ph, n_paths, seed)


def noisy_scalar(**kw):
    """Scalar model whose adjoint has a diffusion term."""
    base = dict(A=0.3, C=0.3, H=0.5, N=0.2, G=1.0, xi=1.0, q=0.5)
    base.update(kw)
    return constant_model(**base)


def noisy_planar(**kw):
    """Two-dimensional model with nonsymmetric A and C."""
    base = dict(
        A=[[0.0, 1.0], [-0.5, 0.2]],
        B=[[1.0, 0.0], [0.5, 1.0]],
        C=[[0.2, 0.1], [0.0, 0.3]],
        H=0.5 * np.eye(2),
        N=0.1 * np.eye(2),
        R=[[0.5, 0.1], [0.1, 1.0]],
        G=np.eye(2),
        xi=[1.0, 0.0],
        q=[0.5, 0.2],
    )
    base.update(kw)
    return constant_model(**base)


@pytest.fixture
def model1():
    return constant_model()
