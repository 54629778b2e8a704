"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid user configuration (grid sizes, field specs, boundary data, ...)."""


class SolverError(RuntimeError):
    """A linear solve failed; ``residual`` holds the achieved relative residual if known."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BasisDependenceError(SolverError):
    """The coarse system is singular because multiscale basis functions are dependent."""
