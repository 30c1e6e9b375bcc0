"""Exception types shared across the package."""


class AirdError(Exception):
    """Base class for all package errors."""


class DimensionError(AirdError):
    """Shape or resolution mismatch."""


class GraphError(AirdError):
    """Autograd contract violation (e.g. backward on a non-scalar)."""


class NumericError(AirdError):
    """NaN/Inf detected, or a value outside an operation's numeric domain."""


class NormalizationError(AirdError):
    """A vector with (near-)zero norm where a direction is required."""


class BatchSizeError(AirdError):
    """Batch too small for an operation that needs batch statistics."""


class ConfigError(AirdError):
    """Invalid configuration value, key, or insufficient data for a request."""


class ProtocolError(AirdError):
    """Malformed or inconsistent evaluation protocol."""
