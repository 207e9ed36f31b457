from typing import Any, Dict, Optional


class BetaEnsembleError(Exception):
    """
    Base class for every failure raised by the library.

    Attributes:
        exit_code: Process exit status the CLI maps this failure to
        details: Structured diagnostic payload written into the manifest
    """

    exit_code: int = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details = details or {}


class ConfigurationError(BetaEnsembleError):
    """Invalid input: model file, domain, potential or stage request"""

    exit_code = 2


class DomainError(ConfigurationError):
    """Segments overlapping, unsorted, degenerate or unbounded"""


class PotentialError(ConfigurationError):
    """Unsupported or malformed interaction"""


class NumericalError(BetaEnsembleError):
    """A computation did not reach its tolerance"""

    exit_code = 3


class ConvergenceError(NumericalError):
    pass


class CriticalityError(NumericalError):
    """The equilibrium measure is not off-critical"""


class NegativeDensityError(NumericalError):
    pass


class EvaluationError(NumericalError):
    """A point lies outside the analyticity domain or too close to the support"""


class ContourExhausted(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass


class NotInImageError(NumericalError):
    pass


class TensorBudgetExceeded(NumericalError):
    pass


class VerificationError(BetaEnsembleError):
    """A statistical comparison failed its threshold"""

    exit_code = 4


class MissingCoefficient(BetaEnsembleError):
    """A correlator coefficient was read before the recursion produced it"""
