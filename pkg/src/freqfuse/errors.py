"""Exception types shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 1, data and
contract problems exit 2, numeric failures exit 3.
"""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class ConfigError(ValueError):
    """Invalid configuration value or flag combination."""


class ContractError(ValueError):
    """An input violates an operation's stated precondition."""


class DataError(ValueError):
    """Malformed or inconsistent data file."""


class DegenerateInputError(ValueError):
    """Input is degenerate (e.g. a zero vector where a direction is needed)."""


class RetrievalError(ValueError):
    """Knowledge retrieval cannot proceed (e.g. empty knowledge base)."""


class NumericError(ArithmeticError):
    """A kernel op produced NaN/Inf, or training diverged."""
