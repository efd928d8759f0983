"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid system configuration or config file."""


class ContractViolation(RuntimeError):
    """An operation was called outside its stated preconditions."""


class InvalidAction(ValueError):
    """Offload target outside the valid server range."""


class CheckpointFormatError(ValueError):
    """Checkpoint file is corrupt or belongs to an incompatible layout."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class CalibrationError(RuntimeError):
    """Reward-scale calibration hit a degenerate reward stream."""
