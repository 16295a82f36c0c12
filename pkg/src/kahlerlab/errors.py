"""Exception types shared across the package."""


class KahlerLabError(Exception):
    """Base class for all package errors."""


class ConfigError(KahlerLabError, ValueError):
    """Invalid model or experiment configuration."""


class NonConvergence(KahlerLabError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class PositivityLoss(KahlerLabError, RuntimeError):
    """A step left the cone of admissible potentials."""


class NormalizationAmbiguity(KahlerLabError, ValueError):
    """The constant mode of a solution is undetermined."""


class StepTooLarge(KahlerLabError, RuntimeError):
    """A warm-started continuation step failed even after bisection."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class StepRejected(KahlerLabError, RuntimeError):
    """A flow step failed even after repeated step halving."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class TruncationExceeded(KahlerLabError, ValueError):
    """An orbit parameter or minimizer left the truncation window."""


class Inconclusive(KahlerLabError, RuntimeError):
    """A verdict was requested on a trajectory that is too short."""


class ModelMismatch(KahlerLabError, ValueError):
    """Two objects live on different model geometries."""


class ConvexificationFailure(KahlerLabError, ValueError):
    """Legendre data of a potential is degenerate."""
