"""Shared exception types."""


class ShapeError(ValueError):
    """Tensor or raster extents are inconsistent with an operation's contract."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class NonFiniteError(ArithmeticError):
    """A NaN or Inf appeared where the pipeline requires finite values."""


class DataError(RuntimeError):
    """On-disk data is missing or inconsistent with its manifest."""
