"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes do not agree with the model they are used with."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""


class NumericError(ArithmeticError):
    """A numerical routine produced a non-finite or unusable result."""
