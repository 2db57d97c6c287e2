"""Exception types raised across the package."""


class GridVoltError(Exception):
    """Base class for all package errors."""


class NetworkValidationError(GridVoltError, ValueError):
    """A network file or object violates a structural rule."""


class NonConvergence(GridVoltError, RuntimeError):
    """Newton iterations hit ``max_iter`` without meeting the tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularJacobian(GridVoltError, RuntimeError):
    pass


class DimensionMismatch(GridVoltError, ValueError):
    pass


class ZeroDegree(GridVoltError, ValueError):
    pass


class EigenFailure(GridVoltError, RuntimeError):
    pass


class DegenerateClustering(GridVoltError, ValueError):
    pass


class MissingAgentAction(GridVoltError, ValueError):
    pass


class UnknownAgent(GridVoltError, KeyError):
    pass


class ConfigurationError(GridVoltError, ValueError):
    """Partition/device layout cannot be turned into a valid agent set."""


class CheckpointError(GridVoltError, RuntimeError):
    """Checkpoint is corrupt, truncated, or belongs to another configuration."""


class DegenerateDenominator(GridVoltError, ZeroDivisionError):
    pass
