"""Exception types shared across the package."""


class UnhazeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(UnhazeError):
    """Invalid configuration or mismatched module wiring."""


class InputError(UnhazeError):
    """Caller-supplied data violates a precondition (shape, range, size)."""


class FormatError(UnhazeError):
    """A serialized file is corrupt, truncated or has the wrong layout."""


class IngestionError(UnhazeError):
    """Dataset directories are inconsistent (orphans, undecodable files)."""


class TrainingError(UnhazeError):
    """Optimization failed (non-finite gradients or loss)."""
