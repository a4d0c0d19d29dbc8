"""Exception types shared across the pipeline."""


class StwnnError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(StwnnError):
    """Input values violate a documented invariant (non-finite, empty, out of range)."""


class DimensionError(StwnnError):
    """Array shapes are inconsistent with the operation's contract."""


class ConfigError(StwnnError):
    """A configuration object or parameter is invalid."""


class InsufficientDataError(StwnnError):
    """The input is too short for the requested windowing."""


class UsageError(StwnnError):
    """The API was called in an unsupported way (wrong call pattern, empty dataset)."""


class FormatError(StwnnError):
    """A file does not match the expected on-disk format (magic bytes, version)."""


class CorruptionError(StwnnError):
    """A file is structurally valid but truncated or internally inconsistent."""


class CompatibilityError(StwnnError):
    """Persisted data does not match the configuration it is being loaded into."""
