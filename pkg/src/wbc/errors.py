"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A scenario or solver configuration is malformed or inconsistent."""


class CapacityError(ValueError):
    """A problem instance exceeds a configured size cap."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance within its budget.

    Carries the last residual so callers can report how close the solve got.
    """

    def __init__(self, message: str, residual: float | None = None):
        if residual is not None:
            message = f"{message} (last residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual
