"""Monte-Carlo simulation of the decoupled Hamiltonian system.

The adjoint ``P`` is simulated forward by Euler-Maruyama,

    dP = -(A^T P + H Y) dt - (C^T P + N Z) dW,   P_0 = -G (I + Theta_0 G)^{-1} phi_0,

and the state is reconstructed from the decoupling field:
``Y = Theta P + phi``, ``Z = (I + Theta N)^{-1}(eta - Theta C^T P)`` and the
policy mean ``v = K P`` with ``K = -W^{-1} B^T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .brownian import BrownianPaths, path_generator, path_mean, path_var
from .bsde import PhiSolution
from .errors import GridMismatch, NaNEncountered, NonSPD
from .model import LQModel, control_weight, ensure_validated
from .riccati import RiccatiSolution, resolvent


@dataclass(frozen=True, eq=False)
class SimulatedEnsemble:
    """Paths of ``(P, Y, Z, v)`` at every knot, shape ``(n_paths, K+1, dim)``."""

    brownian: BrownianPaths
    theta: RiccatiSolution
    phi: PhiSolution
    P: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    v: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        for name in ("P", "Y", "Z", "v"):
            getattr(self, name).setflags(write=False)

    @property
    def grid(self):
        return self.brownian.grid

    @property
    def n_paths(self) -> int:
        return self.P.shape[0]

    @property
    def W(self) -> np.ndarray:
        return self.brownian.W

    def summary(self) -> dict:
        """Per-knot means and variances of every simulated variable."""
        out = {"t": self.grid.knots.tolist(), "brownian": self.brownian.metadata()}
        for name in ("P", "Y", "Z", "v"):
            x = getattr(self, name)
            out[name] = {"mean": path_mean(x).tolist(), "var": path_var(x).tolist()}
        return out


def feedback_gain(m: LQModel) -> np.ndarray:
    """``K_k = -W_k^{-1} B_k^T`` per knot, shape ``(K+1, p, n)``."""
    W = control_weight(m)
    return -np.linalg.solve(W, np.swapaxes(m.B.values, -1, -2))


def initial_adjoint(m: LQModel, th: RiccatiSolution, ph: PhiSolution) -> np.ndarray:
    """``P_0 = -G (I + Theta_0 G)^{-1} phi_0`` (``phi_0 = alpha_0`` since ``W_0 = 0``)."""
    M = np.eye(m.n) + th.theta[0] @ m.G
    return -m.G @ np.linalg.solve(M, ph.phi_alpha[0])


def simulate_hamiltonian_system(
    m: LQModel,
    th: RiccatiSolution,
    ph: PhiSolution,
    n_paths: int = 10_000,
    seed: int = 42,
    *,
    n_workers: int = 1,
    brownian: BrownianPaths | None = None,
) -> SimulatedEnsemble:
    m = ensure_validated(m)
    grid = m.grid
    if th.grid != grid or ph.grid != grid:
        raise GridMismatch("Theta, phi and model must share one time grid")
    if brownian is None:
        brownian = BrownianPaths.generate(grid, n_paths, seed, n_workers=n_workers)
    elif brownian.grid != grid:
        raise GridMismatch("Brownian paths and model use different grids")
    K, dt, n = grid.n_steps, grid.dt, m.n
    A, C, H, N = (getattr(m, x).values for x in "ACHN")
    theta = th.theta
    eta = ph.eta
    # Z = P @ zP[k].T + z0[k]
    res = np.stack([resolvent(theta[k], N[k], module="simulate", op="simulate_hamiltonian_system") for k in range(K + 1)])
    zP = -res @ theta @ np.swapaxes(C, -1, -2)
    z0 = np.einsum("kij,kj->ki", res, eta)

    W = brownian.W
    dW = brownian.dW
    n_p = brownian.n_paths
    P = np.empty((n_p, K + 1, n))
    P[:, 0] = initial_adjoint(m, th, ph)
    for k in range(K):
        Pk = P[:, k]
        Yk = Pk @ theta[k] + ph.phi_alpha[k] + W[:, k, None] * ph.phi_beta[k]
        Zk = Pk @ zP[k].T + z0[k]
        drift = Pk @ A[k] + Yk @ H[k]
        diff = Pk @ C[k] + Zk @ N[k]
        nxt = Pk - drift * dt - diff * dW[:, k, None]
        if not np.all(np.isfinite(nxt)):
            bad = int(np.nonzero(~np.all(np.isfinite(nxt), axis=1))[0][0])
            raise NaNEncountered(
                f"non-finite adjoint on path {bad} at step {k + 1}", module="simulate", op="simulate_hamiltonian_system"
            )
        P[:, k + 1] = nxt
    Y = np.einsum("ski,kij->skj", P, theta) + ph.phi(W)
    Z = np.einsum("ski,kji->skj", P, zP) + z0[None]
    gain = feedback_gain(m)
    v = np.einsum("ski,kji->skj", P, gain)
    return SimulatedEnsemble(brownian, th, ph, P, Y, Z, v, gain)


def forward_state_error(m: LQModel, ens: SimulatedEnsemble) -> dict:
    """Step the state forward from ``Y_0`` with the reconstructed ``Z`` and ``v``.

    Returns the mean-square terminal mismatch against ``xi`` and the largest
    per-knot mean-square gap to the reconstructed ``Y``. Both shrink with
    the step size; they are diagnostics, not guarantees.
    """
    A, B, C = (getattr(m, x).values for x in "ABC")
    dt = m.grid.dt
    dW = ens.brownian.dW
    y = np.array(ens.Y[:, 0])
    worst = 0.0
    for k in range(m.grid.n_steps):
        y = y + (y @ A[k].T + ens.v[:, k] @ B[k].T + ens.Z[:, k] @ C[k].T) * dt + ens.Z[:, k] * dW[:, k, None]
        worst = max(worst, float(np.mean(np.sum((y - ens.Y[:, k + 1]) ** 2, axis=1))))
    xi = m.terminal.sample(ens.W[:, -1])
    return {"terminal_mse": float(np.mean(np.sum((y - xi) ** 2, axis=1))), "max_mse": worst}


def sample_policy_actions(ens: SimulatedEnsemble, rule, n_samples: int, seed: int, *, knots=None, paths=None) -> np.ndarray:
    """Draw ``a ~ N(mean_k(P), Sigma_k)`` for selected paths and knots.

    Returns shape ``(len(paths), len(knots), n_samples, p)``. Each
    ``(path, knot)`` pair has its own stream keyed by ``(seed, path, knot)``.
    """
    knots = range(ens.grid.n_knots) if knots is None else knots
    paths = range(ens.n_paths) if paths is None else paths
    knots, paths = list(knots), list(paths)
    p = rule.Sigma.shape[-1]
    chol = []
    for k in knots:
        try:
            chol.append(np.linalg.cholesky(rule.Sigma[k]))
        except np.linalg.LinAlgError:
            raise NonSPD(f"policy covariance at knot {k} is not positive definite", module="simulate", op="sample_policy_actions") from None
    means = rule.mean(ens.P)
    out = np.empty((len(paths), len(knots), n_samples, p))
    for i, path in enumerate(paths):
        for j, k in enumerate(knots):
            z = path_generator(seed, path, k).standard_normal((n_samples, p))
            out[i, j] = means[path, k] + z @ chol[j].T
    return out
