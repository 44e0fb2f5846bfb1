"""Exception types shared across the package.

The CLI maps these onto exit codes: validation-style errors exit 1,
file/format errors exit 2.
"""


class CrossViewError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CrossViewError):
    """A config object or call parameter is out of its valid range."""


class DimensionError(CrossViewError):
    """Array shapes do not satisfy an operation's contract."""


class DegenerateInputError(CrossViewError):
    """Input carries no usable signal (e.g. an all-zero feature volume)."""


class CacheError(CrossViewError):
    """A precomputed Fourier cache does not match its feature volume."""


class TrainingError(CrossViewError):
    """Training produced a non-finite loss and was aborted."""


class ManifestError(CrossViewError):
    """A dataset manifest row failed parsing or validation."""


class StoreFormatError(CrossViewError):
    """A binary store file has a bad magic, version or header."""


class StoreLengthError(StoreFormatError):
    """A binary store file ended before its declared payload."""
