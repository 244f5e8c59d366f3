"""Exception and warning types raised across the package."""


class MultiscaleError(Exception):
    """Base class for all package errors."""


class SingularDiffusion(MultiscaleError):
    """sigma sigma^T or tau2 tau2^T is (numerically) singular."""


class NonFiniteState(MultiscaleError):
    """A simulated state coordinate became inf or nan."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class GridMismatch(MultiscaleError):
    """Path arrays disagree with the time grid or with each other."""


class DegenerateNormalEquations(MultiscaleError):
    """The normal-equation matrix is too ill-conditioned to identify theta."""


class NonPositiveDefinite(MultiscaleError):
    """Fisher information is not positive definite."""


class ConfigError(MultiscaleError):
    """Invalid experiment or command-line configuration."""


class DiscretizationWarning(UserWarning):
    """dt / delta is above the recommended 0.1."""


class StderrTooLarge(UserWarning):
    """Monte Carlo standard error of an invariant average exceeds 5% of it."""


class RegimeWarning(UserWarning):
    """delta > eps: outside the regime where the normality theory applies."""
