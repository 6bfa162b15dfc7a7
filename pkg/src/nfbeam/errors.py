"""Exception types shared across the package."""


class NfbeamError(Exception):
    """Base class for all nfbeam errors."""


class ConfigError(NfbeamError):
    """Invalid or inconsistent configuration."""


class DimensionError(NfbeamError):
    """Array shapes or indices inconsistent with the configuration."""


class DegenerateInputError(NfbeamError):
    """Input is degenerate for the requested operation (zero channel, zero variance, ...)."""


class DataFormatError(NfbeamError):
    """Dataset or checkpoint file is malformed, truncated, or version-mismatched."""


class TrainingError(NfbeamError):
    """Training-time failure (bad labels, NaN gradients, checkpoint mismatch)."""
