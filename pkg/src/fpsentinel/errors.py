"""Exception types shared across the package."""


class FpSentinelError(Exception):
    """Base class for all package errors."""


class InvalidIdentifierError(FpSentinelError, ValueError):
    """Raised when an API identifier cannot be canonicalized."""


class TelemetryParseError(FpSentinelError, ValueError):
    """Malformed JSON in a telemetry line.

    Carries the byte offset of the failure when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class SchemaError(FpSentinelError, ValueError):
    """A required field is missing or has the wrong shape."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ValidationError(FpSentinelError, ValueError):
    """A field is present but violates a value constraint."""


class FormatVersionError(FpSentinelError, ValueError):
    """A persisted file carries an unknown header or version."""


class ConfigError(FpSentinelError, ValueError):
    """Invalid configuration (manifest, training, or generation parameters)."""


class SiteNotFoundError(FpSentinelError, KeyError):
    """A site was requested that is not part of the corpus."""


class InfeasibleBudgetError(FpSentinelError, ValueError):
    """No noise multiplier on the search grid satisfies the privacy budget."""
