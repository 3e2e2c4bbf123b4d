"""Shared exception types."""


class DataError(ValueError):
    """Raised when input data violates the expected schema or semantics."""


class ConfigError(ValueError):
    """Raised when an experiment configuration is malformed or inconsistent."""


class TrainingDivergedError(RuntimeError):
    """Raised when model training produces a non-finite loss."""
