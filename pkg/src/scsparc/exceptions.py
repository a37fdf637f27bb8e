"""Exception hierarchy shared by every module."""


class ScSparcError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(ScSparcError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(ScSparcError, ArithmeticError):
    """A numerical routine produced a non-finite value or failed to converge.

    ``index`` carries the offending sample index (Monte Carlo) when known and
    ``partial`` the best available partial result (quadrature).
    """

    def __init__(self, message, index=None, partial=None):
        super().__init__(message)
        self.index = index
        self.partial = partial


class DivergenceError(NumericalError):
    """An iterative algorithm produced a non-finite iterate."""

    def __init__(self, message, iteration=None, block=None):
        super().__init__(message)
        self.iteration = iteration
        self.block = block


class UndecodableError(ScSparcError):
    """The requested operating point admits no decoding wave."""


class ResourceError(ScSparcError, MemoryError):
    """A requested allocation exceeds the configured memory cap."""

    def __init__(self, message, required_bytes):
        super().__init__(message)
        self.required_bytes = required_bytes


class ExperimentError(ScSparcError):
    """An experiment failed as a whole (e.g. most trials diverged)."""
