"""Exception hierarchy shared across the package.

The CLI maps these onto its stable exit codes (see ``cli.EXIT_*``).
"""


class CsiMtlError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CsiMtlError, ValueError):
    """An operation was called with arguments violating its contract."""


class ConfigError(InvalidArgumentError):
    """A run/task/model configuration is inconsistent or incomplete."""


class DimensionMismatchError(InvalidArgumentError):
    """Model and data dimensions (N_c, N_t, M) do not line up."""


class DataError(CsiMtlError):
    """A persisted artifact is malformed."""


class CorruptHeaderError(DataError):
    """Dataset/checkpoint header is not parseable or fails validation."""


class ShapeMismatchError(DataError):
    """Header-declared shapes are internally inconsistent."""


class TruncatedPayloadError(DataError):
    """Payload byte count disagrees with the header."""


class CheckpointIncompatibleError(DataError):
    """Checkpoint config hash does not match the target models."""


class MissingArtifactError(CsiMtlError):
    """A required checkpoint/dataset/report input does not exist."""
