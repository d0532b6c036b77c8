"""Exception hierarchy shared by the pipeline.

The CLI maps each family onto its own exit status, so new errors should
subclass one of the four families rather than ``CfcastError`` directly.
"""

from __future__ import annotations


class CfcastError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(CfcastError):
    exit_code = 2


class DataError(CfcastError):
    exit_code = 3


class SchemaError(DataError):
    pass


class RowError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateDateError(RowError):
    pass


class RangeError(DataError):
    pass


class LengthError(DataError, ValueError):
    pass


class MissingDataError(DataError):
    """Gaps remain after interpolation where a model needs a full series."""


class NormalizationError(DataError):
    pass


class LabelError(DataError):
    pass


class WindowError(DataError):
    pass


class FitError(CfcastError):
    exit_code = 4


class EvaluationError(FitError):
    pass


class ConvergenceError(FitError):
    """Optimizer ran out of iterations; ``best`` holds the best point found."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class DivergenceError(FitError):
    def __init__(self, epoch: int, message: str = "non-finite training loss"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


class DegenerateLeafError(FitError, ValueError):
    pass


class AggregateError(FitError):
    """Every candidate of a batch failed; ``failures`` maps label to reason."""

    def __init__(self, message: str, failures: dict):
        detail = "; ".join(f"{k}: {v}" for k, v in failures.items())
        super().__init__(f"{message} ({detail})" if detail else message)
        self.failures = dict(failures)


class OutputError(CfcastError):
    exit_code = 5
