"""Exception types shared across the pipeline."""


class ChainFraudError(Exception):
    """Base class for all package errors."""


class ConfigError(ChainFraudError):
    """Invalid configuration: bad chain tag, bad ratios, bad hyperparameters."""


class DataError(ChainFraudError):
    """Invalid data that cannot be skipped: label conflicts, shape mismatches."""


class RedactionError(DataError):
    """A raw account identifier leaked into a dossier, prompt, or summary."""


class RemoteBackendError(ChainFraudError):
    """Remote summarizer failed after bounded retries."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts
