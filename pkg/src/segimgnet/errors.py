"""Exception hierarchy. Each class carries the process exit code the CLI maps it to."""


class SegImgNetError(Exception):
    exit_code = 1


class ConfigurationError(SegImgNetError, ValueError):
    """Incompatible shapes, bad hyperparameters or malformed configuration."""

    exit_code = 2


class UsageError(SegImgNetError, RuntimeError):
    """An API was called in a state where it cannot do anything meaningful."""

    exit_code = 2


class DataError(SegImgNetError, ValueError):
    """Input data violates a contract (non-binary masks, missing classes, bad files)."""

    exit_code = 3


class NumericError(SegImgNetError, FloatingPointError):
    """Training produced a non-finite loss."""

    exit_code = 4
