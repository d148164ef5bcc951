"""Exception hierarchy shared across the package."""


class SplineFMError(Exception):
    """Base class for all package errors."""


class ConfigError(SplineFMError):
    """Invalid configuration document or invalid arguments."""


class DataError(SplineFMError):
    """Malformed or degenerate input data."""


class NumericalError(SplineFMError):
    """Numerical failure during training or evaluation (NaN loss etc.)."""
