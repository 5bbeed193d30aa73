class ConfigError(ValueError):
    """Invalid configuration or hyper-parameter combination."""


class ShapeError(ValueError):
    """Tensor dimensions that do not compose."""


class CheckpointError(IOError):
    """Malformed, truncated or incompatible checkpoint file."""
