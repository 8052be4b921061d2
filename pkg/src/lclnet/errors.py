"""Exception types shared across the package."""


class LclError(Exception):
    """Base class for all package errors."""


class ShapeError(LclError):
    """Tensor shapes violate an operation's contract."""


class ContractError(LclError):
    """A non-shape precondition was violated (malformed context, non-scalar loss, ...)."""


class ConfigError(LclError):
    """Invalid or inconsistent configuration."""


class DataError(LclError):
    """Dataset ingest or resolution failure."""


class ProtocolError(LclError):
    """An evaluation protocol constraint (trial count, way count) is violated."""


class NumericError(LclError):
    """Non-finite values where finite ones are required."""


class CheckpointError(LclError):
    """Checkpoint file is unreadable, truncated, or incompatible."""


class UninitializedStatsError(LclError):
    """Eval-mode normalization requested before any running statistics were recorded."""
