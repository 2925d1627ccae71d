"""Exception hierarchy shared across the package."""


class RebKyleError(Exception):
    """Base class for all package errors."""


class InvalidParam(RebKyleError):
    """A model or config parameter violates its documented bounds."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateDenominator(RebKyleError):
    """A shared denominator underflowed to zero."""


class SocViolation(RebKyleError):
    """A second-order (concavity) condition fails, so the first-order
    candidate is not a maximum."""


class NoPositiveRoot(RebKyleError):
    """The terminal-period scalar equation has no positive price-impact root."""


class InnerNoConvergence(RebKyleError):
    """The per-period nonlinear system did not converge."""


class AdmissibilityFail(RebKyleError):
    """A root was found but violates positivity, Cauchy-Schwarz, or an SOC."""


class OuterNoConvergence(RebKyleError):
    """The shooting loop failed to match the time-0 moments.

    Carries the best shooting state found for diagnostics.
    """

    def __init__(self, message, best_state=None):
        self.best_state = best_state
        super().__init__(message)


class PathologicalRegion(RebKyleError):
    """Every continuation branch failed admissibility for these parameters."""


class SingularCovariance(RebKyleError):
    """The order-flow covariance matrix is numerically singular."""


class MissingInput(RebKyleError):
    """A required input file is absent."""
