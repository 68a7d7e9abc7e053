"""Exception types shared across the package.

The CLI maps these onto exit codes: ValidationError -> 1, NumericsError -> 2.
"""


class KittenError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(KittenError):
    """Invalid argument, configuration value, or file content."""


class NumericsError(KittenError):
    """Numerical failure: truncation overflow, non-convergence, degenerate spectrum."""
