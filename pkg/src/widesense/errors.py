"""Exception hierarchy shared across modules."""


class WidesenseError(Exception):
    """Base class for all package errors."""


class ConfigError(WidesenseError, ValueError):
    """Invalid configuration value or combination."""


class ShapeError(WidesenseError, ValueError):
    """Array dimensions do not match what an operation requires."""


class LengthError(ShapeError):
    """Input too short for the requested output length."""


class DataError(WidesenseError, ValueError):
    """Non-finite or otherwise unusable numeric data."""


class LabelError(WidesenseError, ValueError):
    """Class label outside the valid range."""


class DegenerateSupportError(WidesenseError, ValueError):
    """Sensing matrix restricted to a support is rank deficient."""


class MetricError(WidesenseError, ValueError):
    """Metric is undefined for the given inputs."""


class FormatError(WidesenseError, ValueError):
    """Malformed, truncated, or wrong-version binary file."""


class ChecksumError(FormatError):
    """Stored checksum does not match the payload."""
