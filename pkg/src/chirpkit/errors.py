"""Exception types shared across the pipeline."""


class ChirpkitError(Exception):
    """Base class for all package errors."""


class DecodeError(ChirpkitError):
    """Malformed audio container (bad RIFF structure, truncated data)."""


class UnsupportedFormatError(ChirpkitError):
    """Valid container but an encoding we do not handle."""


class ManifestError(ChirpkitError):
    """Bad dataset manifest: unknown label, duplicate row, missing column."""


class ConfigError(ChirpkitError):
    """Invalid configuration value or mismatched configs."""


class CheckpointError(ChirpkitError):
    """Corrupt checkpoint or spec mismatch on load."""


class TrainingDivergedError(ChirpkitError):
    """Non-finite loss during training; carries epoch/batch context."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
