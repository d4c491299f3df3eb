class ConfigError(ValueError):
    """Bad or inconsistent configuration (CLI exit code 1)."""


class InvariantViolation(RuntimeError):
    """A runtime invariant failed (CLI exit code 2)."""


class NonFiniteError(InvariantViolation, FloatingPointError):
    """NaN or Inf appeared in parameters, gradients or losses."""


class EpisodeFinished(RuntimeError):
    """``step`` was called on an episode that already reached its horizon."""


class DemoGenerationError(RuntimeError):
    def __init__(self, message, achieved):
        super().__init__(message)
        self.achieved = achieved


class DatasetFormatError(ValueError):
    """Demo dataset file is corrupt, truncated or does not match the expected env."""
