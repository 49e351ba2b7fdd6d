"""Exception hierarchy shared across the package."""


class PatternConvError(Exception):
    """Base class for all package errors."""


class ConfigError(PatternConvError):
    """Invalid configuration or usage (CLI exit code 1)."""


class DataError(PatternConvError):
    """Malformed or invariant-violating input data (CLI exit code 2)."""


class NumericalError(PatternConvError):
    """Non-finite loss or other numerical failure (CLI exit code 3)."""
