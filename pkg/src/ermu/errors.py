"""Exception types shared across the package."""


class ErmuError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(ErmuError, ValueError):
    """An argument violates a documented precondition."""


class SolverDivergedError(ErmuError, RuntimeError):
    """The iterative solver produced a non-finite objective."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class LinearSolveError(ErmuError, RuntimeError):
    """A direct linear solve failed beyond jitter repair."""


class ConfigError(ErmuError, ValueError):
    """An experiment config failed to parse or validate."""
