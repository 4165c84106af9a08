"""Exception types shared across the package."""


class CoarsekitError(Exception):
    """Base class for all package errors."""


class DomainError(CoarsekitError):
    """An input lies outside the mathematically admissible range."""


class EvaluationError(CoarsekitError):
    """A derived quantity could not be evaluated; carries a location hint."""

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} (at {where})")
        self.where = where


class SingularityError(CoarsekitError):
    """Quadrature failed to converge at a singular endpoint."""


class DegenerateProfile(CoarsekitError):
    """Tail integral vanishes on an interior interval of the support."""


class ReachabilityError(CoarsekitError):
    """Requested point/state is outside the admissible (reachable) set."""


class DegenerateDenominator(CoarsekitError):
    """A denominator that should be positive is not."""


class StepTooLarge(CoarsekitError):
    """Characteristics crossed within one step; reduce the step size."""


class NoContraction(CoarsekitError):
    """Fixed-point iteration failed to contract on the given horizon."""


class DomainExit(CoarsekitError):
    """A controlled path left the admissible region."""


class HypothesisError(CoarsekitError):
    """A structural hypothesis needed for a synthesized solution fails."""


class ConfigError(CoarsekitError):
    """Invalid or incomplete run configuration; names the offending key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
