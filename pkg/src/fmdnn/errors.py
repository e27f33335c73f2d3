"""Exception types raised across the package."""


class FmdnnError(Exception):
    """Base class for all package errors."""


class DimensionError(FmdnnError, ValueError):
    """Operand shapes are incompatible."""


class InputError(FmdnnError, ValueError):
    """An argument value is outside its valid domain."""


class ParameterError(FmdnnError, ValueError):
    """A model or membership parameter violates its constraints."""


class UsageError(FmdnnError, RuntimeError):
    """An API was called in an invalid state."""


class ConfigError(FmdnnError, ValueError):
    """Configuration is invalid or inconsistent with the data."""


class DatasetError(FmdnnError):
    """A dataset directory or image could not be loaded."""


class MetricsError(FmdnnError, ValueError):
    """Metrics cannot be computed from the given counts."""


class FormatError(FmdnnError):
    """A checkpoint or image file is malformed."""


class TrainingError(FmdnnError, RuntimeError):
    """Training diverged (non-finite loss)."""
