"""Exception types shared across the package.

The CLI maps these onto exit codes: config problems exit 2, data/format
problems exit 3, numeric failures exit 4.
"""


class PevaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PevaError):
    """Invalid configuration value or combination."""


class DimensionError(PevaError):
    """Operand shapes are incompatible."""


class FormatError(PevaError):
    """Malformed container or manifest file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(PevaError):
    """Inconsistent dataset content (bad labels, mismatched categories, ...)."""


class DegenerateInputError(DataError):
    """Numerically degenerate input, e.g. a zero row where a direction is needed."""


class InsufficientDataError(DataError):
    """A class has fewer samples than the requested shot count."""


class CapacityError(DataError):
    """Requested construction exceeds what the dimensionality allows."""


class NumericError(PevaError):
    """Non-finite value or failed numeric verification."""
