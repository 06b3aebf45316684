"""Exception hierarchy for DelayWalk.

Configuration problems and numerical failures are kept apart so the CLI can
map them to distinct exit codes.
"""


class DelayWalkError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(DelayWalkError, ValueError):
    """Invalid scenario, measure, policy or run parameter."""


class NumericalError(DelayWalkError, ArithmeticError):
    """A numerical procedure could not deliver its guarantee."""


class QuadratureError(NumericalError):
    """Gauss-Legendre node doubling did not converge."""


class StepSizeError(NumericalError):
    """Fixed-step integration lost positivity or conserved mass."""


class EnvelopeError(NumericalError):
    """A rejection or thinning envelope was exceeded."""
