"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent shapes, resolutions or settings."""


class UsageError(ValueError):
    """An operation was called outside its contract (e.g. non-scalar backward)."""


class FormatError(ValueError):
    """Malformed on-disk data. ``offset`` is the byte offset of the problem, if known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(ValueError):
    """Data that parses but violates a domain invariant."""


class DegenerateSampleError(ValueError):
    """A sample has no fluid elements, so losses are undefined."""


class UndefinedMetricError(ValueError):
    """A metric denominator or evaluation set is empty."""


class NumericalError(RuntimeError):
    """Non-finite values appeared during a computation."""
