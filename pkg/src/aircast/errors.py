"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: validation errors exit 1,
numeric failures exit 2, I/O problems exit 3.
"""


class AircastError(Exception):
    """Base class for all package errors."""


class ValidationError(AircastError):
    """Bad configuration, malformed input, or violated preconditions."""


class DimensionError(ValidationError):
    """Array shapes incompatible with the requested operation."""


class NumericError(AircastError):
    """Non-finite values or numerically unstable state."""


class CheckpointError(ValidationError):
    """Unreadable, truncated, or version-incompatible checkpoint file."""
