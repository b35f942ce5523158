"""Problem-instance types, validation, reference measures and entropies.

Everything downstream consumes a :class:`ValidatedModel`. Coefficients are
stored expanded on the time grid as arrays of shape ``(K+1, rows, cols)`` so
integrators can index them by knot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import (
    GridMismatch,
    NonPositiveSigma,
    NonPSD,
    NonSPD,
    NotSymmetric,
    ShapeMismatch,
    UnnormalizedDensity,
)

SYM_TOL = 1e-12
PSD_FLOOR = 1e-10
LOG_2PI = math.log(2.0 * math.pi)


class ModelTypeError(ShapeMismatch):
    pass


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# time grid and coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_K = T``."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ShapeMismatch(f"t_end must be positive and finite, got {self.t_end}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ShapeMismatch(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def n_knots(self) -> int:
        return self.n_steps + 1

    @property
    def knots(self) -> np.ndarray:
        t = np.linspace(0.0, self.t_end, self.n_steps + 1)
        t[-1] = self.t_end
        return t

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t_end, self.n_steps * factor)


@dataclass(frozen=True, eq=False)
class CoefficientPath:
    """Matrix-valued coefficient sampled at every grid knot."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ShapeMismatch(f"coefficient path must have shape (K+1, r, c), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatch("coefficient path has non-finite entries")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def constant(cls, matrix, grid: TimeGrid) -> "CoefficientPath":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(np.broadcast_to(m, (grid.n_knots,) + m.shape).copy())

    @classmethod
    def piecewise_linear(cls, times: Sequence[float], matrices, grid: TimeGrid) -> "CoefficientPath":
        """Linear interpolation in time between ``(times[i], matrices[i])``.

        Outside ``[times[0], times[-1]]`` the end values are held.
        """
        times = np.asarray(times, dtype=float)
        mats = np.asarray(matrices, dtype=float)
        if mats.ndim == 1:
            mats = mats[:, None, None]
        elif mats.ndim == 2:
            mats = mats[:, :, None] if mats.shape[0] == times.size else mats[None]
        if times.ndim != 1 or times.size != mats.shape[0]:
            raise ShapeMismatch("piecewise-linear coefficient needs one matrix per time knot")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ShapeMismatch("piecewise-linear time knots must be strictly increasing")
        t = grid.knots
        r, c = mats.shape[1:]
        out = np.empty((t.size, r, c))
        for i in range(r):
            for j in range(c):
                out[:, i, j] = np.interp(t, times, mats[:, i, j])
        return cls(out)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    def __len__(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# terminal condition and reference measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Deterministic:
    """Terminal value ``xi = c``."""

    c: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ShapeMismatch("terminal vector c must be a finite 1-D vector")
        object.__setattr__(self, "c", _frozen(c))

    @property
    def q(self) -> np.ndarray:
        return np.zeros_like(self.c)

    def sample(self, w_terminal: np.ndarray) -> np.ndarray:
        w = np.asarray(w_terminal, dtype=float)
        return np.broadcast_to(self.c, w.shape + self.c.shape).copy()


@dataclass(frozen=True, eq=False)
class AffineInBrownian:
    """Terminal value ``xi = c + q * W_T``."""

    c: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if c.shape != q.shape or c.ndim != 1:
            raise ShapeMismatch(f"terminal c and q must be vectors of equal length, got {c.shape}, {q.shape}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(q))):
            raise ShapeMismatch("terminal condition has non-finite entries")
        object.__setattr__(self, "c", _frozen(c))
        object.__setattr__(self, "q", _frozen(q))

    def sample(self, w_terminal: np.ndarray) -> np.ndarray:
        w = np.asarray(w_terminal, dtype=float)
        return self.c + w[..., None] * self.q


TerminalCondition = Deterministic | AffineInBrownian


@dataclass(frozen=True)
class StandardGaussian:
    """Prior ``e^{-U}`` with ``U(a) = |a|^2/2 + (p/2) ln 2pi``."""

    name = "standard_gaussian"

    def potential(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if a.ndim <= 1:
            return 0.5 * a**2 + 0.5 * LOG_2PI
        p = a.shape[-1]
        return 0.5 * np.sum(a**2, axis=-1) + 0.5 * p * LOG_2PI


@dataclass(frozen=True)
class Flat:
    """Improper prior ``U = 0`` (Lebesgue reference)."""

    name = "flat"

    def potential(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        return np.zeros(a.shape if a.ndim <= 1 else a.shape[:-1])


@dataclass(frozen=True)
class ControlGrid:
    """Uniform 1-D action lattice."""

    a_min: float
    a_max: float
    n_points: int

    def __post_init__(self):
        if not self.a_min < self.a_max:
            raise ShapeMismatch(f"need a_min < a_max, got [{self.a_min}, {self.a_max}]")
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise ShapeMismatch(f"n_points must be an integer >= 3, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "a_min", float(self.a_min))
        object.__setattr__(self, "a_max", float(self.a_max))

    @classmethod
    def around(cls, center: float, std: float, n_std: float = 8.0, points_per_std: int = 100) -> "ControlGrid":
        n = int(round(2 * n_std * points_per_std)) + 1
        return cls(center - n_std * std, center + n_std * std, n)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.a_min, self.a_max, self.n_points)

    @property
    def step(self) -> float:
        return (self.a_max - self.a_min) / (self.n_points - 1)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.trapezoid(values, dx=self.step))


@dataclass(frozen=True, eq=False)
class GridPotential:
    """Potential ``U`` tabulated on a :class:`ControlGrid` (1-D only)."""

    grid: ControlGrid
    values: np.ndarray
    name = "grid_potential"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_points,):
            raise ShapeMismatch(f"grid potential needs {self.grid.n_points} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatch("grid potential values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    def potential(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        pts = self.grid.points
        if a.shape == pts.shape and np.array_equal(a, pts):
            return np.array(self.values)
        return np.interp(a, pts, self.values)


ReferenceMeasure = StandardGaussian | Flat | GridPotential


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Probability density tabulated on a :class:`ControlGrid`."""

    grid: ControlGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_points,):
            raise ShapeMismatch(f"density needs {self.grid.n_points} values, got {v.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise UnnormalizedDensity("density values must be finite and nonnegative", module="model", op="GridDensity")
        mass = self.grid.integrate(v)
        if abs(mass - 1.0) > 1e-8:
            raise UnnormalizedDensity(f"density integrates to {mass!r}", module="model", op="GridDensity")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_unnormalized(cls, grid: ControlGrid, values) -> "GridDensity":
        v = np.asarray(values, dtype=float)
        return cls(grid, v / grid.integrate(v))

    @classmethod
    def from_pdf(cls, grid: ControlGrid, pdf) -> "GridDensity":
        return cls.from_unnormalized(grid, pdf(grid.points))

    def mean(self) -> float:
        a = self.grid.points
        return self.grid.integrate(a * self.values)

    def variance(self) -> float:
        a = self.grid.points
        m = self.mean()
        return self.grid.integrate((a - m) ** 2 * self.values)

    def l1_distance(self, other: "GridDensity") -> float:
        check_same_grid(self.grid, other.grid)
        return self.grid.integrate(np.abs(self.values - other.values))


def check_same_grid(g1: ControlGrid, g2: ControlGrid) -> None:
    if g1 != g2:
        raise GridMismatch(f"control grids differ: {g1} vs {g2}")


# ---------------------------------------------------------------------------
# the LQ problem instance
# ---------------------------------------------------------------------------

_COEFFS = ("A", "B", "C", "H", "N", "R")
_SYMMETRIC = ("H", "N", "R")


@dataclass(frozen=True, eq=False)
class LQModel:
    """Coefficients of the controlled linear BSDE and its quadratic cost.

    The state is ``dY = (A Y + B v + C Z) dt + Z dW`` with ``Y_T = xi`` and
    scalar Brownian motion; the running cost weights are ``H, R, N`` and the
    initial-value weight is ``G``.
    """

    A: CoefficientPath
    B: CoefficientPath
    C: CoefficientPath
    H: CoefficientPath
    N: CoefficientPath
    R: CoefficientPath
    G: np.ndarray
    sigma: float
    terminal: TerminalCondition
    reference: ReferenceMeasure
    grid: TimeGrid

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class ValidationCertificate:
    """Smallest eigenvalue found per symmetric coefficient over the grid."""

    min_eigenvalues: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ValidatedModel(LQModel):
    certificate: ValidationCertificate = field(default_factory=ValidationCertificate)


def _symmetrize(values: np.ndarray, which: str, knots: np.ndarray | None) -> np.ndarray:
    """Symmetrize each matrix, refusing asymmetry above the relative tolerance."""
    asym = np.abs(values - np.swapaxes(values, -1, -2)).max(axis=(-2, -1))
    scale = np.maximum(1.0, np.abs(values).max(axis=(-2, -1)))
    bad = np.nonzero(asym > SYM_TOL * scale)[0]
    if bad.size:
        k = int(bad[0])
        t = None if knots is None else float(knots[k])
        raise NotSymmetric(which, t, f"asymmetry {asym[k]:.3e} exceeds tolerance")
    return 0.5 * (values + np.swapaxes(values, -1, -2))


def _min_eig_checked(values: np.ndarray, which: str, knots: np.ndarray | None) -> float:
    eig = np.linalg.eigvalsh(values)
    norms = np.abs(eig).max(axis=-1)
    lo = eig[..., 0]
    bad = np.nonzero(lo < -PSD_FLOOR * (1.0 + norms))[0]
    if bad.size:
        k = int(bad[0])
        t = None if knots is None else float(knots[k])
        raise NonPSD(which, t, f"smallest eigenvalue {lo[k]:.3e}")
    return float(lo.min())


def validate_model(m: LQModel) -> ValidatedModel:
    """Check shapes, symmetry and semi-definiteness; return a validated copy.

    Nearly symmetric weights are replaced by their symmetric part.
    Idempotent: validating a validated model returns an equivalent model.
    """
    if not (isinstance(m.sigma, (int, float)) and math.isfinite(m.sigma) and m.sigma > 0):
        raise NonPositiveSigma(f"sigma must be a positive real, got {m.sigma!r}")
    grid = m.grid
    n, p = m.n, m.p
    expected = {"A": (n, n), "B": (n, p), "C": (n, n), "H": (n, n), "N": (n, n), "R": (p, p)}
    for name in _COEFFS:
        path = getattr(m, name)
        if path.shape != expected[name]:
            raise ShapeMismatch(f"{name} has shape {path.shape}, expected {expected[name]}")
        if len(path) != grid.n_knots:
            raise ShapeMismatch(f"{name} has {len(path)} knots, grid has {grid.n_knots}")
    G = np.atleast_2d(np.asarray(m.G, dtype=float))
    if G.shape != (n, n) or not np.all(np.isfinite(G)):
        raise ShapeMismatch(f"G has shape {G.shape}, expected {(n, n)}")
    if m.terminal.c.shape != (n,):
        raise ShapeMismatch(f"terminal vector has shape {m.terminal.c.shape}, expected {(n,)}")
    if not isinstance(m.reference, (StandardGaussian, Flat, GridPotential)):
        raise ModelTypeError(f"unknown reference measure {m.reference!r}")

    knots = grid.knots
    sym = {}
    certs = {}
    for name in _SYMMETRIC:
        vals = _symmetrize(getattr(m, name).values, name, knots)
        certs[name] = _min_eig_checked(vals, name, knots)
        sym[name] = CoefficientPath(vals)
    Gs = _symmetrize(G[None], "G", None)
    certs["G"] = _min_eig_checked(Gs, "G", None)
    # R + sigma^2/2 I is then positive definite automatically.
    return ValidatedModel(
        A=m.A,
        B=m.B,
        C=m.C,
        H=sym["H"],
        N=sym["N"],
        R=sym["R"],
        G=_frozen(Gs[0]),
        sigma=float(m.sigma),
        terminal=m.terminal,
        reference=m.reference,
        grid=grid,
        certificate=ValidationCertificate(certs),
    )


def ensure_validated(m: LQModel) -> ValidatedModel:
    return m if isinstance(m, ValidatedModel) else validate_model(m)


def replace_model(m: LQModel, **changes) -> LQModel:
    """Copy of ``m`` with fields replaced; the result is unvalidated."""
    kw = {f.name: getattr(m, f.name) for f in fields(LQModel)}
    kw.update(changes)
    return LQModel(**kw)


def constant_model(
    *,
    A=0.0,
    B=1.0,
    C=0.0,
    H=0.0,
    N=0.0,
    R=0.5,
    G=0.0,
    sigma: float = 1.0,
    xi=1.0,
    q=None,
    reference: ReferenceMeasure | None = None,
    t_end: float = 1.0,
    n_steps: int = 1000,
) -> ValidatedModel:
    """Build a validated model with time-constant coefficients.

    Scalars are accepted for 1-D problems; ``xi`` and ``q`` give the
    terminal condition ``xi + q W_T`` (deterministic when ``q`` is None).
    """
    grid = TimeGrid(t_end, n_steps)
    mats = {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in dict(A=A, B=B, C=C, H=H, N=N, R=R, G=G).items()}
    c = np.atleast_1d(np.asarray(xi, dtype=float))
    terminal = Deterministic(c) if q is None else AffineInBrownian(c, np.atleast_1d(np.asarray(q, dtype=float)))
    m = LQModel(
        **{k: CoefficientPath.constant(mats[k], grid) for k in _COEFFS},
        G=mats["G"],
        sigma=sigma,
        terminal=terminal,
        reference=reference if reference is not None else StandardGaussian(),
        grid=grid,
    )
    return validate_model(m)


def adjoint_is_deterministic(m: LQModel) -> bool:
    """True when the adjoint SDE has no diffusion (C and N vanish)."""
    return not np.any(m.C.values) and not np.any(m.N.values)


def control_weight(m: LQModel) -> np.ndarray:
    """Per-knot matrix inverted in the optimal feedback.

    ``R + sigma^2/2 I`` for the standard-Gaussian prior and ``R`` for the flat
    prior (which then must be positive definite).
    """
    R = m.R.values
    if isinstance(m.reference, StandardGaussian):
        return R + 0.5 * m.sigma**2 * np.eye(m.p)
    if isinstance(m.reference, Flat):
        lo = np.linalg.eigvalsh(R)[..., 0]
        if np.any(lo <= PSD_FLOOR * (1.0 + np.abs(R).max())):
            raise NonSPD("flat reference requires R positive definite", module="model", op="control_weight")
        return R.copy()
    raise ModelTypeError("grid-potential references are only supported by the 1-D Gibbs layer")


# ---------------------------------------------------------------------------
# entropies
# ---------------------------------------------------------------------------


def _chol_logdet(Sigma: np.ndarray, op: str) -> float:
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        raise NonSPD("covariance is not symmetric positive definite", module="model", op=op) from None
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _as_cov(Sigma, p: int) -> np.ndarray:
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if S.shape != (p, p):
        raise ShapeMismatch(f"covariance has shape {S.shape}, expected {(p, p)}")
    if np.abs(S - S.T).max() > SYM_TOL * max(1.0, np.abs(S).max()):
        raise NonSPD("covariance is not symmetric", module="model", op="kl_gaussian")
    return S


def kl_gaussian(v, Sigma) -> float:
    """Relative entropy of ``N(v, Sigma)`` with respect to ``N(0, I)``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    S = _as_cov(Sigma, v.size)
    logdet = _chol_logdet(S, "kl_gaussian")
    return 0.5 * (float(np.trace(S)) + float(v @ v) - v.size - logdet)


def gaussian_relative_entropy(v, Sigma, reference: ReferenceMeasure) -> float:
    """``Ent(N(v, Sigma) | e^{-U})`` for the Gaussian and flat priors."""
    if isinstance(reference, StandardGaussian):
        return kl_gaussian(v, Sigma)
    if isinstance(reference, Flat):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        S = _as_cov(Sigma, v.size)
        logdet = _chol_logdet(S, "gaussian_relative_entropy")
        return -0.5 * (v.size * (1.0 + LOG_2PI) + logdet)
    raise ModelTypeError("closed-form Gaussian entropy needs a standard-Gaussian or flat reference")


def entropy_grid(mu: GridDensity, reference: ReferenceMeasure) -> float:
    """Trapezoid approximation of ``int (ln mu + U) mu da`` on the density's grid."""
    g = mu.grid
    mass = g.integrate(mu.values)
    if abs(mass - 1.0) > 1e-8:
        raise UnnormalizedDensity(f"density integrates to {mass!r}", module="model", op="entropy_grid")
    a = g.points
    U = reference.potential(a)
    vals = mu.values
    integrand = np.zeros_like(vals)
    pos = vals > 0
    integrand[pos] = (np.log(vals[pos]) + U[pos]) * vals[pos]
    return g.integrate(integrand)


# ---------------------------------------------------------------------------
# cost report
# ---------------------------------------------------------------------------

COST_COMPONENTS = ("state_cost", "control_cost", "z_cost", "entropy_cost", "endpoint_cost")


@dataclass(frozen=True)
class CostReport:
    total: float
    components: dict
    std_error: float
    n_paths: int
    coe: float

    def __post_init__(self):
        if set(self.components) != set(COST_COMPONENTS):
            raise ValueError(f"components must be exactly {COST_COMPONENTS}")
        s = math.fsum(self.components.values())
        if abs(s - self.total) > 1e-12 * max(1.0, abs(self.total)):
            raise ValueError(f"total {self.total!r} differs from component sum {s!r}")
        if not self.std_error >= 0:
            raise ValueError("std_error must be nonnegative")

    @classmethod
    def from_components(cls, components: dict, *, std_error: float, n_paths: int, coe: float) -> "CostReport":
        comps = {k: float(components[k]) for k in COST_COMPONENTS}
        return cls(math.fsum(comps.values()), comps, float(std_error), int(n_paths), float(coe))

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "components": dict(self.components),
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "coe": self.coe,
        }
