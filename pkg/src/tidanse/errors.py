"""Exception and warning types raised across the package."""


class TidanseError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(TidanseError, ValueError):
    """Cholesky pivot was not strictly positive."""


class ConvergenceFailure(TidanseError, RuntimeError):
    """The Hermitian eigensolver did not converge."""


class SingularCovariance(TidanseError, ValueError):
    """Covariance matrix too ill-conditioned to invert."""


class ShapeMismatch(TidanseError, ValueError):
    """Operand shapes are inconsistent."""


# alternative name used for filter/signal dimension errors
DimensionMismatch = ShapeMismatch


class DisconnectedGraph(TidanseError, ValueError):
    """The topology is not connected."""


class DegenerateGamma(TidanseError, ValueError):
    """Normalization factor is zero, negative or non-finite."""


class InvalidConfig(TidanseError, ValueError):
    """A configuration or descriptor violates a constraint."""


class DegenerateNormalization(UserWarning):
    """Reference G block too small to normalize by; gamma reset to 1."""
