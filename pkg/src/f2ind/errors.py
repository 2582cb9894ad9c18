"""Exception types shared across the package."""


class F2IndError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigError(F2IndError):
    """Invalid configuration value or precondition violation."""


class FormatError(F2IndError):
    """File does not carry the expected magic / layout."""


class TruncatedError(F2IndError):
    """File ends before the declared payload is complete."""


class CorruptError(F2IndError):
    """File is structurally complete but internally inconsistent."""


class IoError(F2IndError):
    """Underlying OS-level read/write failure."""


class ShapeError(F2IndError):
    """Array arguments disagree on shape."""


class NumericError(F2IndError):
    """Non-finite values where finite ones are required."""


class CacheError(F2IndError):
    """Backward pass received a cache that does not match its inputs."""


class ScheduleError(F2IndError):
    """Learning-rate schedule queried outside its step range."""


class EmptyError(F2IndError):
    """Metric requested on an empty batch."""


class UndefinedMetricError(F2IndError):
    """Metric undefined for the given label composition."""
