"""Error types raised across the library."""


class SwwaeError(Exception):
    """Base class for all library errors."""


class ShapeError(SwwaeError, ValueError):
    """Tensor shapes or layer geometry do not line up."""


class ConfigError(SwwaeError, ValueError):
    """A network/run configuration is invalid or inconsistent."""


class DataError(SwwaeError, ValueError):
    """A dataset file is malformed (bad magic, truncation, count mismatch)."""


class CheckpointError(SwwaeError, RuntimeError):
    """A checkpoint is missing, corrupt, or does not match the config."""


class SwitchError(SwwaeError, ValueError):
    """A pooling-switch map carries an out-of-range index."""


class StaleRecordError(SwwaeError, RuntimeError):
    """A forward record is used after the parameters it captured changed."""


class DivergenceError(SwwaeError, RuntimeError):
    """Training produced non-finite gradients or a runaway loss."""
