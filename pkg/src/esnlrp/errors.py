"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration or precondition violation (bad shapes, ranges, flags)."""


class DataError(RuntimeError):
    """Input files that are missing, malformed, or inconsistent with their header."""


class NumericError(ArithmeticError):
    """Numerical failure: non-convergence, degenerate systems, NaN blow-ups."""
