"""
exceptions.py - Error hierarchy for the curiosity-driven abstraction learner

All errors raised by the package derive from MisfaError so the CLI can map
them to exit codes. Errors about bad values also derive from ValueError.
"""

from typing import Optional


class MisfaError(Exception):
    """Base class for all package errors"""


class ConfigError(MisfaError, ValueError):
    """
    Invalid or missing experiment configuration.

    Attributes:
        field: Name of the offending config key (None when the whole file is at fault)
    """

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class StreamError(MisfaError, ValueError):
    """Bad stream specification or viewport index"""


class NonFiniteInputError(MisfaError, ValueError):
    """An observation contains NaN or infinite components"""


class DimensionMismatchError(MisfaError, ValueError):
    """Input dimension does not match the abstraction"""


class InsufficientStatisticsError(MisfaError, RuntimeError):
    """A statistic was requested before enough samples were seen"""


class SingularCovarianceError(MisfaError, ArithmeticError):
    """Covariance matrix is rank deficient"""


class SolverError(MisfaError, ArithmeticError):
    """Policy evaluation system could not be solved"""


class BudgetExhaustedError(MisfaError, RuntimeError):
    """The iteration budget of a trial has been used up"""
