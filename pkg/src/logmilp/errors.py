"""Exception types shared across the package."""


class LogMilpError(Exception):
    """Base class for every error raised by this package."""


class MalformedLine(LogMilpError):
    """A log line could not be parsed; callers may skip it and count."""


class InvalidDimension(LogMilpError):
    """Embedding dimension below the minimum of 2."""


class EmptyInput(LogMilpError):
    """No instances were supplied where at least one is required."""


class InvalidWindow(LogMilpError):
    """Window/stride/block parameters out of range."""


class TooFewBags(LogMilpError):
    """Fewer than three bags; a train/val/test split is impossible."""


class ShapeMismatch(LogMilpError):
    """Tensor shapes incompatible with the model configuration."""


class DegenerateVector(LogMilpError):
    """A valid row had near-zero norm and cannot be normalized."""


class InvalidIndex(LogMilpError):
    """Instance index outside the bag or pointing at a padded slot."""


class SingleClass(LogMilpError):
    """Both classes are required (AUC / threshold selection)."""


class NoPositiveBags(LogMilpError):
    """Localization metrics need at least one positive bag."""


class NonFiniteLoss(LogMilpError):
    """Training produced NaN/inf; the run is aborted with diagnostics."""


class InvalidSpec(LogMilpError):
    """Synthetic corpus spec violates its own invariants."""


class CacheError(LogMilpError):
    """An on-disk cache/checkpoint file is corrupt or inconsistent."""


class ConfigError(LogMilpError):
    """Bad or unknown configuration key/value (CLI exit code 2)."""


class MissingArtifact(LogMilpError):
    """A required input file does not exist (CLI exit code 3)."""
