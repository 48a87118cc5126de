"""Exception hierarchy; each family maps to one CLI exit code."""

__all__ = [
    "BDYError",
    "ConfigError",
    "ConservationViolatedError",
    "DegenerateDenominatorError",
    "EmptyGroupError",
    "InequalityViolatedError",
    "InvalidParamsError",
    "InvariantViolation",
    "LengthMismatchError",
    "MaximalityViolatedError",
    "NonFiniteStateError",
    "NumericError",
    "TailTooHeavyError",
    "WeightUnderflowError",
    "ZeroMeanError",
]


class BDYError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(BDYError, ValueError):
    """Invalid parameters or inputs (exit 2)."""

    exit_code = 2


class NumericError(BDYError, ArithmeticError):
    """A numerical routine could not produce a trustworthy value (exit 3)."""

    exit_code = 3


class InvariantViolation(BDYError, AssertionError):
    """A structural invariant of the model failed (exit 4)."""

    exit_code = 4


class InvalidParamsError(ConfigError):
    """Model parameters outside their admissible ranges."""


class LengthMismatchError(ConfigError):
    """Two PMFs that must share a support do not."""


class EmptyGroupError(ConfigError):
    """Requested agent group has no members."""


class TailTooHeavyError(NumericError):
    """Truncated geometric tail mass exceeds tolerance."""


class ZeroMeanError(NumericError):
    """Gini index requested for a distribution with zero mean."""


class NonFiniteStateError(NumericError):
    """NaN or Inf appeared in an integrated state."""


class DegenerateDenominatorError(NumericError):
    """Closed-form Gini denominator is too close to zero."""


class WeightUnderflowError(NumericError):
    """Equilibrium weight too small to divide by."""


class ConservationViolatedError(InvariantViolation):
    """Total money changed during an agent-based run."""


class MaximalityViolatedError(InvariantViolation):
    """A sampled admissible pair beat the equilibrium H value."""

    def __init__(self, message: str, pair: object = None) -> None:
        """Keep the offending pair for inspection."""
        super().__init__(message)
        self.pair = pair


class InequalityViolatedError(InvariantViolation):
    """Weighted Poincare-type inequality failed for a sample."""
