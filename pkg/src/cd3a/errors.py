"""Exception types shared across the package.

All inherit ValueError so callers can catch broadly; the subclasses exist
so tests and the CLI can tell configuration mistakes apart from data
problems.
"""


class DimensionError(ValueError):
    """Tensor or matrix shapes are incompatible for the requested op."""


class ParameterError(ValueError):
    """A numeric parameter is outside its valid range."""


class LabelError(ValueError):
    """A class/domain label is outside the valid set."""


class UsageError(ValueError):
    """The API was called in an unsupported way (e.g. non-scalar loss)."""


class FormatError(ValueError):
    """A file being parsed does not match the expected schema."""


class ConfigError(ValueError):
    """An experiment or model configuration is invalid or incoherent."""
