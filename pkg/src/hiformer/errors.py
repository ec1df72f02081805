"""Exception taxonomy shared across the package.

The CLI maps these onto its exit-code contract: data problems exit 2,
configuration problems exit 3, numerical failures exit 4.
"""


class HiformerError(Exception):
    """Base class for all package-specific errors."""


class DataError(HiformerError):
    """Bad or malformed input data (missing file, broken timestamps, NaNs)."""


class SchemaError(DataError):
    """A required column is absent or has the wrong type."""


class DegenerateChannelError(DataError):
    """A channel is constant on the training split, so Z-scoring is undefined."""


class ConfigError(HiformerError):
    """Invalid configuration or violated operation precondition."""


class ShapeError(ConfigError):
    """Tensor shapes incompatible with the requested operation."""


class NumericsError(HiformerError):
    """Non-finite values produced where finite ones are guaranteed."""


class NanLossError(NumericsError):
    """Training loss became NaN; carries epoch/batch diagnostics in the message."""
