"""Exception types shared across the package."""


class RicciUCPError(Exception):
    """Base class for all package errors."""


class DomainError(RicciUCPError, ValueError):
    """An argument lies outside the domain of a formula (e.g. r >= pi/sqrt(K))."""


class PreconditionError(RicciUCPError, ValueError):
    """A hypothesis of an estimate or operation is not met by the inputs."""


class VerificationError(RicciUCPError):
    """A postcondition that the construction guarantees was found violated.

    ``witness`` carries the offending item when one exists.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ConvergenceError(RicciUCPError):
    """Iterative solver stopped at its iteration cap."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual
