"""
Error types raised by the estimation services.

All of them derive from ValueError so callers that only guard against bad
inputs keep working; the CLI maps them to a one-line diagnostic.
"""

from typing import Optional


class MultiscaleError(ValueError):
    """Base class for every error raised by the services"""


class ModelError(MultiscaleError):
    """Inadmissible model, coefficient or parameter"""


class InstabilityError(MultiscaleError):
    """A simulated or filtered state became non-finite"""

    def __init__(self, what: str, step: int):
        self.step = step
        super().__init__(f"{what} became non-finite at step {step}")


class DegeneracyError(MultiscaleError):
    """All particle log-weights are -inf"""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"particle weights degenerated at step {step}")


class GridMismatchError(MultiscaleError):
    """Two time series that must share a grid do not"""


class ConfigError(MultiscaleError):
    """Bad run configuration; carries the offending key"""

    def __init__(self, key: Optional[str], message: str):
        self.key = key
        prefix = f"{key}: " if key else ""
        super().__init__(f"{prefix}{message}")


class StudyAbortedError(MultiscaleError):
    """Too many Monte Carlo replicates failed"""
