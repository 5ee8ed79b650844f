"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config errors exit 2, data/domain
errors exit 3, numeric failures exit 4.
"""


class HypepullError(Exception):
    """Base class for all package errors."""


class DimensionError(HypepullError):
    """Inputs with incompatible or unsupported dimensions."""


class DomainError(HypepullError):
    """Inputs outside the mathematical domain of an operation."""


class ConfigError(HypepullError):
    """Invalid configuration values (hyperparameters, CLI flags)."""


class DataError(HypepullError):
    """Malformed dataset or artifact files."""


class NumericError(HypepullError):
    """Numerical failure (factorization breakdown, non-finite results)."""


class UnsupportedOperationError(HypepullError):
    """Operation not defined for the given model type."""
