"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI lives in ecpe.cli; keep new exception
types under one of these roots so stages fail with a meaningful code.
"""


class EcpeError(Exception):
    """Base class for all package errors."""


class ConfigError(EcpeError):
    """Invalid configuration, template, or argument."""


class CorpusParseError(EcpeError):
    """Input file is not parseable in the declared format."""


class SchemaError(EcpeError):
    """Parseable input violating the corpus schema (labels, indices, spans)."""


class DataError(EcpeError):
    """Well-formed data unusable for the requested operation."""


class CapacityError(EcpeError):
    """A configured capacity (e.g. max speakers) was exceeded."""


class BackendError(EcpeError):
    """Remote classification backend failed after bounded retries."""


class NormalizationError(EcpeError):
    """Model output could not be mapped to a known emotion label."""

    def __init__(self, raw: str):
        super().__init__(f"cannot map model output to an emotion label: {raw!r}")
        self.raw = raw


class CheckpointError(EcpeError):
    """Model checkpoint missing, corrupt, or incompatible."""
