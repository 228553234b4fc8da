"""Exception types shared by the package. The CLI maps each to an exit code."""


class KacError(Exception):
    """Base class for package errors."""


class DomainError(KacError, ValueError):
    """Input outside the domain of an operation (bad beta, misaligned grid, ...)."""


class DimensionError(DomainError):
    """Arrays or grids that do not match."""


class ConvergenceError(KacError, RuntimeError):
    """An iterative solver stopped without meeting its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class IntegrationError(ConvergenceError):
    """Time integration produced non-finite values or got stuck at the clamp."""


class CenterNotFoundError(KacError, RuntimeError):
    """No sign change of the orthogonality function inside a mixed contour."""


class AuditFailure(KacError, AssertionError):
    """A checked inequality was violated."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst
