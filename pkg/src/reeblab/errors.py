"""Exception types shared across the library."""


class ReebLabError(Exception):
    """Base class for all reeb-lab errors."""


class DomainError(ReebLabError):
    """A point, vector, or parameter violates a manifold constraint."""


class DegenerateFormError(ReebLabError):
    """The contact condition failed at a point.

    Carries the offending diagnostic (smallest singular value of
    d-lambda on ker lambda, or the residual of a defining linear system).
    """

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic


class NotCoorientationPreservingError(ReebLabError):
    """A pullback ratio came out non-positive."""


class NotAContactomorphismError(ReebLabError):
    """Pullback of the contact form is not a pointwise multiple of it."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BasisRankError(ReebLabError):
    """The Gram matrix of a function basis collapsed below the expected rank."""


class ExpressionError(ReebLabError):
    """A field expression failed to parse or used unknown symbols."""


class ConfigError(ReebLabError):
    """A run configuration contains unknown keys or inconsistent values."""
