"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised for malformed grids, benchmark configs, or CLI run configs."""


class TrialFailure(RuntimeError):
    """Raised when a training run becomes unusable (e.g. non-finite loss)."""
