"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: ConfigError -> 2,
DataError -> 3, anything else -> 4.
"""


class ConfigError(ValueError):
    """Bad configuration: unknown keys, invalid values, unusable method strings."""


class DataError(ValueError):
    """Unusable input data: ragged CSV, non-numeric cells, missing columns, empty splits."""


class EmptySelectionError(ValueError):
    """A feature mask with no selected features was asked to be evaluated."""


class InvalidActionError(ValueError):
    """An RL action targeted an empty queue or a terminal state."""


class CalibrationError(RuntimeError):
    """Sigma calibration cannot reach the requested error rate.

    Carries the achievable error band so callers can pick a feasible target.
    """

    def __init__(self, message: str, achievable: tuple[float, float]):
        super().__init__(message)
        self.achievable = achievable
