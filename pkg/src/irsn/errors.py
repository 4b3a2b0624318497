"""Exception types shared across the package.

Each maps to a CLI exit code: ConfigError -> 2, DatasetError and
CheckpointError -> 3, NumericalError -> 4.
"""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


class DatasetError(OSError):
    """Dataset files missing or malformed."""


class CheckpointError(OSError):
    """Checkpoint file malformed; message carries the byte offset."""


class NumericalError(ArithmeticError):
    """Non-finite value produced where a finite one was required."""
