"""Exception hierarchy.

Validation problems with the problem instance derive from :class:`ModelError`
(the CLI maps them to exit code 1); failures raised while computing derive
from :class:`NumericalError` (exit code 3) and carry the originating
module/operation.
"""

from __future__ import annotations


class EntropicBSDEError(Exception):
    """Base class for every error raised by this package."""


class ModelError(EntropicBSDEError, ValueError):
    """The problem instance violates a structural requirement."""


class ShapeMismatch(ModelError):
    pass


class NonPositiveSigma(ModelError):
    pass


class NonPSD(ModelError):
    """A coefficient that must be symmetric positive semi-definite is not."""

    def __init__(self, which: str, t: float | None = None, detail: str = ""):
        self.which = which
        self.t = t
        where = f" at t={t:.6g}" if t is not None else ""
        msg = f"{which} is not symmetric positive semi-definite{where}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NotSymmetric(NonPSD):
    pass


class GridMismatch(EntropicBSDEError, ValueError):
    """Inputs were produced on different time or control grids."""


class NumericalError(EntropicBSDEError, ArithmeticError):
    """A computation could not be completed reliably."""

    def __init__(self, message: str, *, module: str = "", op: str = ""):
        self.module = module
        self.op = op
        prefix = f"[{module}.{op}] " if module and op else ""
        super().__init__(prefix + message)


class NonSPD(NumericalError):
    pass


class SingularResolvent(NumericalError):
    pass


class BlowUp(NumericalError):
    pass


class DegenerateMass(NumericalError):
    pass


class TailMassError(NumericalError):
    pass


class UnnormalizedDensity(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, max_iter: int, gap: float, **kw):
        self.max_iter = max_iter
        self.gap = gap
        super().__init__(
            f"no convergence after {max_iter} iterations (last L1 gap {gap:.3e})", **kw
        )


class IllConditionedRegression(NumericalError):
    pass


class NaNEncountered(NumericalError):
    pass
