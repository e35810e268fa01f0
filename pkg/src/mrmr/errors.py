"""Exception and warning types shared across the package."""


class MRMRError(Exception):
    """Base class for all package errors."""


class DomainError(MRMRError, ValueError):
    """A parameter lies outside the domain of a link or density."""


class NonFiniteError(MRMRError, FloatingPointError):
    """A computation produced inf or nan where a finite value is required."""


class NotPositiveDefiniteError(MRMRError, ValueError):
    """A matrix that must be symmetric positive definite is not."""


class SingularSystemError(MRMRError, ValueError):
    """The coefficient update system cannot be solved."""


class FitError(MRMRError, RuntimeError):
    """An EM fit failed; ``trace`` holds the iterations completed so far."""

    def __init__(self, message, trace=None, iteration=None):
        super().__init__(message)
        self.trace = list(trace or [])
        self.iteration = iteration


class DataFormatError(MRMRError, ValueError):
    """Malformed dataset or model file."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at its iteration cap."""
