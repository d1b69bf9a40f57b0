"""Exception types shared across the package."""


class AdqError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AdqError):
    """Invalid architecture, quantizer, or experiment configuration."""


class InputError(AdqError):
    """Invalid runtime input (bad labels, out-of-range values, missing data)."""


class UsageError(AdqError):
    """API misuse, e.g. backward called with a stale or foreign cache."""


class TrainingDiverged(AdqError):
    """Training produced a non-finite loss; a diagnostic checkpoint may exist."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
