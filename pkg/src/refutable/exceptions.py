"""Exception types shared across the package."""


class RefutableError(Exception):
    """Base class for all package errors."""

    #: module that raised the error; the CLI reports it as provenance
    module = "refutable"


class DomainError(RefutableError, ValueError):
    """An argument lies outside the region where an operation is defined."""


class InfeasibleError(RefutableError):
    """No structure rationalizes the data at the requested deviation."""


class ConvergenceError(RefutableError, RuntimeError):
    """A numerical optimizer stopped before meeting its tolerance.

    Parameters
    ----------
    message : str
    best : array-like, optional
        Best iterate found.
    grad_norm : float, optional
        Gradient norm at ``best``.
    """

    def __init__(self, message, best=None, grad_norm=None):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm


class GridError(DomainError):
    """The outcome grid truncates too much probability mass."""

    def __init__(self, message, truncated_mass):
        super().__init__(message)
        self.truncated_mass = truncated_mass


class DataError(RefutableError, ValueError):
    """Malformed input data.

    Parameters
    ----------
    message : str
    line : int, optional
        1-based line number in the source file.
    code : str
        Short machine-readable reason.
    """

    def __init__(self, message, line=None, code="malformed"):
        super().__init__(message)
        self.line = line
        self.code = code


class NumericalError(RefutableError, RuntimeError):
    """Too many per-draw computations failed for the aggregate to be trusted."""
