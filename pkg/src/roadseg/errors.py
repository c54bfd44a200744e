"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or weight shapes are inconsistent with the requested operation."""


class DomainError(ValueError):
    """An argument is outside the operation's valid domain."""


class GradError(RuntimeError):
    """Autograd misuse, e.g. backward on a non-scalar without a seed gradient."""


class ConfigError(ValueError):
    """A configuration record is malformed or violates its invariants."""


class DataError(ValueError):
    """A dataset file is missing, unreadable, or inconsistent with its pair."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt or has the wrong magic/version."""
