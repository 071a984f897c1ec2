"""Exception types shared across the package."""


class S3DError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(S3DError):
    """Invalid or inconsistent configuration, raised at construction time."""


class InputError(S3DError):
    """Malformed runtime input (bad class index, mismatched lengths, ...)."""


class ModelFormatError(S3DError):
    """Model file is corrupt, truncated, or from an incompatible config."""


class GenerationError(S3DError):
    """Synthetic dataset generation cannot satisfy its constraints."""


class TrainingDiverged(S3DError):
    """Training produced a non-finite loss; the message names the culprit."""
