"""Exception classes shared by the solver modules."""


class SolverError(Exception):
    """Base class for every error raised by the package."""


class DomainError(SolverError, ValueError):
    """A numeric input is outside the domain of an operation (NaN, inf)."""


class ConfigurationError(SolverError, ValueError):
    """Invalid grid, volatility bounds, catalog coefficients or CFL violation."""


class AlignmentError(SolverError, ValueError):
    """A query time is not an integer multiple of the grid step."""


class PreconditionError(SolverError, ValueError):
    """Input data violates a stated precondition (compatibility, ordering)."""


class BoundaryViolation(SolverError):
    """A boundary object does not satisfy its declared catalog constants."""


class GridMismatch(SolverError, ValueError):
    """Two objects that must share a grid do not."""


class IterationFailure(SolverError):
    """A fixed-point or Picard iteration did not converge.

    The per-iteration diagnostics are kept on ``diagnostics``.
    """

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)
