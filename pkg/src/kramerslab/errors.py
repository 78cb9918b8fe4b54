"""Exception taxonomy shared by all modules.

Every failure mode raised on purpose derives from :class:`KramersLabError`,
so callers can fence the whole package with one except clause while tests
target the precise class.
"""

from __future__ import annotations


class KramersLabError(Exception):
    """Base class for all deliberate failures."""


# landscape validation
class ValidationFailure(KramersLabError):
    """A clause of the landscape assumptions failed; message names the clause."""


class AdmissibilityError(KramersLabError):
    """Parameters outside the certified box of a potential family."""


# quadrature and tabulation
class QuadratureError(KramersLabError):
    """Estimated quadrature error above tolerance after refinement."""


class MonotonicityError(KramersLabError):
    """Tabulated values lost strict monotonicity (rounding or bad input)."""


class RangeError(KramersLabError):
    """Query outside a table's covered range."""


# paths and functionals
class GridMismatch(KramersLabError):
    """Two discrete objects do not share a compatible grid."""


class SingularDensity(KramersLabError):
    """Zero density met a nonzero flux where a ratio was required."""


class ViolationError(KramersLabError):
    """A certified inequality failed beyond tolerance; indicates a bug."""


class DegenerateBound(KramersLabError):
    """Concentration bound undefined (reference masses not separated)."""


class EmptyMeasure(KramersLabError):
    """An operation required a measure with positive mass."""


class StructureError(KramersLabError):
    """A path violates its structural invariants (monotonicity, flux law)."""


class InfiniteCost(KramersLabError):
    """Variational problem is +infinity for the given data."""


class DegenerateDenominator(KramersLabError):
    """Limit profile undefined because flux and mass both vanish."""


# solvers and simulation
class TuningFailure(KramersLabError):
    """Initial-data tuning parameter left its admissible interval."""


class StabilityError(KramersLabError):
    """A stability precondition or linear solve failed."""


class NegativityError(KramersLabError):
    """A density went negative beyond round-off."""


class BudgetExceeded(KramersLabError):
    """A simulation exceeded its step budget."""


# orchestration
class ConfigError(KramersLabError):
    """Experiment configuration invalid; message names the field."""


class IoError(KramersLabError):
    """Could not read or write a result artifact."""
