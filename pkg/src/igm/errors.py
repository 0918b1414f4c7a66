"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, argument, or precondition."""


class FormatError(IOError):
    """Malformed or truncated binary file; message carries a byte offset."""


class ConvergenceError(ArithmeticError):
    """A series expansion was requested outside its convergence region."""
