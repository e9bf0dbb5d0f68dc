"""Exception types shared across the package."""


class TilqError(Exception):
    """Base class for all package errors."""


class AssumptionError(TilqError):
    """A coefficient violates one of the standing problem assumptions."""


class ConvergenceError(TilqError):
    """A fixed-point solve failed; carries the iteration diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConsistencyError(TilqError):
    """Two redundant computations of the same quantity disagreed."""


class ProblemFileError(TilqError):
    """A problem file failed to parse, validate, or satisfy the assumptions."""
