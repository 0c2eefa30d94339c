"""Exception and warning types shared across the package.

The CLI maps these onto its exit codes: ValidationError -> 2,
DataError -> 3, TrainingDivergedError -> 4.
"""


class ProtoclassError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ProtoclassError):
    """Invalid configuration, argument, or precondition violation."""


class DataError(ProtoclassError):
    """Malformed or inconsistent on-disk data: bad magic, version or
    dimension mismatch, out-of-range labels, checksum failure."""


class TrainingDivergedError(ProtoclassError):
    """Training loss exceeded the divergence guard."""


class DataWarning(UserWarning):
    """Non-fatal data condition worth surfacing in run reports
    (few-shot shortage, centroid padding, k clamping, ...)."""
