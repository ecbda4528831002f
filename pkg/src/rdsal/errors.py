"""Exception hierarchy shared by all modules."""


class RdsalError(Exception):
    """Base class for all library errors."""


class ShapeError(RdsalError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(RdsalError):
    """Invalid configuration value (bad stride, lr <= 0, unknown key, ...)."""


class UsageError(RdsalError):
    """API misuse (e.g. backward() on a non-scalar)."""


class NumericError(RdsalError):
    """NaN/Inf encountered where finite values are required."""


class CheckpointError(RdsalError):
    """Malformed, truncated or incompatible checkpoint file."""


class ImageIOError(RdsalError):
    """Malformed netpbm file or unsupported variant."""
