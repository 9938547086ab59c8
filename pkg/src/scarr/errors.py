"""Exception types shared across the toolkit."""


class DataError(ValueError):
    """Raised when input files or in-memory datasets violate their schema."""


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration keys/values."""


class ConvergenceError(RuntimeError):
    """Raised when a numerical optimization fails to converge."""
