"""Exception hierarchy shared by all modules.

Exit codes (used by the CLI): 1 validation, 2 numeric, 3 capacity.
"""


class SfrError(Exception):
    exit_code = 1


class ValidationError(SfrError):
    """Bad inputs: malformed config, out-of-range values, contract violations."""

    exit_code = 1


class DatasetFormatError(ValidationError):
    """Dataset directory is missing files or contains malformed records."""


class AugmentationError(ValidationError):
    """Augmentation preconditions not met (e.g. single-class training set)."""


class NumericError(SfrError):
    """NaN/Inf detected or training diverged."""

    exit_code = 2


class CapacityError(SfrError):
    """Input exceeds a hard resource cap (e.g. dense-gradient node limit)."""

    exit_code = 3
