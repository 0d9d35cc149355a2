"""Exception hierarchy. Every error carries the CLI exit code it maps to."""

from __future__ import annotations

from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from prognost.train import TrainReport


class PrognostError(Exception):
    """Base class for all errors raised by prognost"""

    exit_code = 2


class UsageError(PrognostError):
    """Bad command line"""

    exit_code = 1


class ConfigError(PrognostError, ValueError):
    """Invalid configuration value or file"""

    exit_code = 1


class DataError(PrognostError, ValueError):
    """Input data is missing, malformed or unusable"""

    exit_code = 2


class EmptyDatasetError(DataError):
    pass


class ParseError(DataError):
    """A line or row could not be parsed. `line` is 1-based."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ValidationError(DataError):
    pass


class GapTooLargeError(DataError):
    """A run of missing values is longer than the interpolation limit"""

    def __init__(self, start: int, end: int, max_gap: int):
        super().__init__(
            f"{end - start} consecutive missing values at indices {start}..{end - 1} "
            f"exceed max_gap={max_gap}; split the series at this gap"
        )
        self.start = start
        self.end = end


class ConstantSeriesError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class SplitError(DataError):
    pass


class DomainError(DataError):
    pass


class MetricUndefinedError(DataError):
    """A normalized metric has no value. rmse and mae, which are always
    defined, ride along."""

    def __init__(self, message: str, rmse: float, mae: float):
        super().__init__(message)
        self.rmse = rmse
        self.mae = mae


class ChannelIndexError(DataError, IndexError):
    pass


class DimensionError(DataError):
    pass


class ContractError(DataError):
    pass


class ModelFormatError(DataError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelCorruptError(ModelFormatError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class NumericError(PrognostError, ArithmeticError):
    """Training or gradient verification went numerically wrong"""

    exit_code = 3


class NonFiniteGradientError(NumericError):
    def __init__(self, block: str):
        super().__init__(f"non-finite gradient in block {block}")
        self.block = block


class TrainingDivergedError(NumericError):
    def __init__(self, message: str, report: TrainReport):
        super().__init__(message)
        self.report = report


class GradCheckFailedError(NumericError):
    pass
