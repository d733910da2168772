"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericsError -> 4.
"""


class VgroundError(Exception):
    """Base class for all package errors."""


class ConfigError(VgroundError):
    """Invalid or incomplete run configuration."""


class DataError(VgroundError):
    """Malformed input file or inconsistent data."""


class NumericsError(VgroundError):
    """Non-finite values, divergence, or failed gradient checks."""
