"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 1, DataError and
FormatError -> 2, NumericError -> 3.
"""


class SpanetError(Exception):
    """Base class for all package errors."""


class DimensionError(SpanetError, ValueError):
    """Tensor/kernel shapes are incompatible for an operation."""


class ConfigError(SpanetError, ValueError):
    """A configuration value is missing, unknown, or out of range."""


class DataError(SpanetError, ValueError):
    """A dataset, manifest, or label is malformed."""


class FormatError(SpanetError, ValueError):
    """A binary artifact (checkpoint, image file) is corrupt or truncated."""


class NumericError(SpanetError, ArithmeticError):
    """A numeric invariant was violated at runtime (non-finite loss, etc.)."""


class ContractViolation(SpanetError, RuntimeError):
    """An API precondition was violated by the caller."""
