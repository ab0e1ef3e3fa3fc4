"""Package-wide exception types, mapped to distinct CLI exit codes."""


class LaneTopoError(Exception):
    """Base class for all package errors."""


class ConfigError(LaneTopoError):
    """Invalid, unknown, or contradictory configuration."""


class DataError(LaneTopoError):
    """Malformed scene/dataset/checkpoint files or invalid input data."""


class NumericalError(LaneTopoError):
    """Non-finite values or numerically invalid operations."""


class ShapeError(NumericalError):
    """Tensor shapes incompatible with the requested operation."""
