"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`TpshockError`.  Numerical problems additionally derive from
:class:`NumericalFailure` so that the command line runner can map them to a
single exit code.
"""


class TpshockError(Exception):
    """Base class for all package errors."""


class ConfigInvalid(TpshockError, ValueError):
    """Malformed or inconsistent run configuration."""


class NumericalFailure(TpshockError, RuntimeError):
    """A numerical stage could not produce a trustworthy result."""

    stage = "numerics"


# characteristic data and algebra
class ComplexSpeeds(NumericalFailure):
    stage = "characteristics"


class DegenerateSpeeds(NumericalFailure):
    stage = "characteristics"


class ZeroSpeed(NumericalFailure):
    stage = "characteristics"


class NotLax(NumericalFailure):
    stage = "characteristics"


class DimensionMismatch(TpshockError, ValueError):
    pass


class RankDeficiency(NumericalFailure):
    stage = "characteristics"


# profiles
class RHViolation(NumericalFailure):
    stage = "profile"


class NoConnection(NumericalFailure):
    stage = "profile"


class TailNotResolved(NumericalFailure):
    stage = "profile"


# time stepping and spectra
class BlowUp(NumericalFailure):
    stage = "evolution"


class CFLViolation(NumericalFailure):
    stage = "evolution"


class MemoryBudgetExceeded(NumericalFailure):
    stage = "monodromy"


class EigensolverFailure(NumericalFailure):
    stage = "eigensolver"


class QuadratureUnderResolved(NumericalFailure):
    stage = "quadrature"


# spatial dynamics
class BranchAmbiguity(NumericalFailure):
    stage = "spatial dynamics"


class TruncationBandExceeded(NumericalFailure):
    stage = "spatial dynamics"


class SplittingCollapse(NumericalFailure):
    stage = "spatial dynamics"


class StiffnessFailure(NumericalFailure):
    stage = "spatial dynamics"


# green's functions and templates
class QuadratureBudgetExceeded(NumericalFailure):
    stage = "quadrature"


class FitIllConditioned(NumericalFailure):
    stage = "fit"


class EmptyRegion(TpshockError, ValueError):
    pass


# experiments
class InsufficientHorizon(NumericalFailure):
    stage = "decay fit"


class FitLost(NumericalFailure):
    stage = "phase extraction"


class TableCoverageInsufficient(NumericalFailure):
    stage = "iteration map"
