"""Exception hierarchy shared by every module."""


class SolverSuiteError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(SolverSuiteError, IndexError):
    """An index or coordinate lies outside its valid range."""


class ValidationError(SolverSuiteError, ValueError):
    """Malformed input: bad parameters, duplicates, inconsistent shapes."""


class PSDViolationError(SolverSuiteError, ValueError):
    """A matrix expected to be positive semi-definite is not.

    ``pivot`` holds the offending factorization pivot.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class PreconditionerSingularError(SolverSuiteError, ArithmeticError):
    """A preconditioner diagonal entry or block pivot is not strictly positive."""

    def __init__(self, message, slice_index=None):
        super().__init__(message)
        self.slice_index = slice_index


class OracleScaleError(SolverSuiteError, ValueError):
    """The dense oracle was asked to handle a system larger than its cap."""


class SingularSystemError(SolverSuiteError, ArithmeticError):
    """The direct factorization of the system failed."""


class BreakdownError(SolverSuiteError, ArithmeticError):
    """PCG curvature ``<p, Hp>`` vanished relative to ``||p||^2``."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class FitError(SolverSuiteError, ValueError):
    """Cost-model least-squares design is rank deficient."""
