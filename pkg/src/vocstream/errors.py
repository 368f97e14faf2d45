"""Exception taxonomy shared across the package."""


class VocstreamError(Exception):
    """Base class for all package errors."""


class ConfigError(VocstreamError):
    """Invalid configuration, geometry, or usage."""


class DataError(VocstreamError):
    """Input data violates an operation's contract."""


class StateError(VocstreamError):
    """Operation not valid in the current session state."""


class NumericError(VocstreamError):
    """Numeric failure, e.g. a degenerate normalization denominator."""


class DesignError(VocstreamError):
    """Filter design failed to reach its quality target."""


class FormatError(VocstreamError):
    """Malformed file. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
