"""Exception classes shared across the package.

The CLI maps these onto exit codes (config/usage -> 1, data -> 2,
numeric -> 3); library code raises them directly.
"""


class ShapeError(ValueError):
    """Operands with incompatible shapes, or a contract violation on shapes."""


class NumericError(ArithmeticError):
    """A computation produced NaN/Inf, or a numeric contract was violated."""


class ConfigError(ValueError):
    """Bad configuration value, unknown key, or inconsistent hyperparameters."""


class DataError(ValueError):
    """Bad dataset content: missing file, malformed record, label out of range."""
