"""Exception types shared across the package."""

from __future__ import annotations


class AflabError(Exception):
    """Base class for all package errors."""


class InvalidSpec(AflabError):
    """Bundle data fails the non-degeneracy or positivity conditions."""

    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__("invalid bundle spec: " + "; ".join(self.failures))


class NotPositiveDefinite(AflabError):
    pass


class DomainError(AflabError, ValueError):
    """Argument outside the open domain of a function."""


class NoConvergence(AflabError):
    """Newton iteration stalled; ``trace`` holds the iterates."""

    def __init__(self, message, trace=()):
        self.trace = list(trace)
        super().__init__(message)


class NotPositive(AflabError, ValueError):
    pass


class BracketFailure(AflabError):
    """Secular-function sign conditions failed on an isolating interval."""


class SpectralMismatch(AflabError):
    """Eigenvalue sign pattern disagrees with the predicted count."""


class ShootingDrift(AflabError):
    """A shooting trajectory left the region it was expected to stay in."""


class ScenarioError(AflabError):
    pass
