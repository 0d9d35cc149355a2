"""Vibration series: raw IMS snapshots and the per-snapshot trend series
built from them"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd

from prognost.errors import DataError, ParseError, ValidationError
from prognost.util import format_float

Array = npt.NDArray[np.float64]

SERIES_FIELDNAMES = ["timestamp", "value"]


class SnapshotFileRef(NamedTuple):
    """One IMS snapshot file and the UTC recording time parsed from its name"""

    path: str
    timestamp: float


@dataclass(frozen=True)
class SnapshotMatrix:
    """Raw acceleration samples of one snapshot, rows x channels"""

    samples: Array
    warnings: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.samples.ndim != 2:
            raise DataError("snapshot samples must be a 2-D matrix")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("snapshot contains non-finite samples")

    @property
    def rows(self) -> int:
        return int(self.samples.shape[0])

    @property
    def channels(self) -> int:
        return int(self.samples.shape[1])


@dataclass(frozen=True)
class SnapshotSeries:
    """Ordered (timestamp, value) pairs, one value per snapshot or CSV row.

    Timestamps are seconds and strictly increasing. Values may be non-finite
    straight after a CSV import, where they mark missing cells; everything
    downstream of `fill_missing` calls `require_finite`."""

    timestamps: Array
    values: Array
    source_label: str = ""
    channel: int = 0

    def __post_init__(self) -> None:
        timestamps = np.array(self.timestamps, dtype=np.float64)
        values = np.array(self.values, dtype=np.float64)
        if timestamps.ndim != 1 or values.ndim != 1:
            raise DataError("series timestamps and values must be 1-D")
        if timestamps.shape != values.shape:
            raise DataError(
                f"{len(timestamps)} timestamps but {len(values)} values in series"
            )
        if len(timestamps) > 1 and not np.all(np.diff(timestamps) > 0):
            index = int(np.argmin(np.diff(timestamps) > 0)) + 1
            raise ValidationError(
                f"timestamps must be strictly increasing (index {index}: "
                f"{format_float(timestamps[index - 1])} -> {format_float(timestamps[index])})"
            )
        timestamps.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.timestamps.tolist(), self.values.tolist()))

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def require_finite(self) -> SnapshotSeries:
        """Return self, or raise if any value is missing"""
        if not self.is_finite:
            index = int(np.argmin(np.isfinite(self.values)))
            raise DataError(
                f"series {self.source_label!r} has a missing value at index {index}; "
                "run preprocess first"
            )
        return self

    def with_values(self, values: Array) -> SnapshotSeries:
        return SnapshotSeries(
            self.timestamps, values, source_label=self.source_label, channel=self.channel
        )

    def __iter__(self) -> Iterator[Tuple[float, float]]:
        return iter(self.points)


def write_series_csv(series: SnapshotSeries, path: str) -> None:
    """Write the canonical `timestamp,value` CSV"""
    with open(path, "w", encoding="utf-8", newline="") as series_file:
        writer = csv.writer(series_file, lineterminator="\n")
        writer.writerow(SERIES_FIELDNAMES)
        for timestamp, value in zip(series.timestamps, series.values):
            writer.writerow([format_float(timestamp), format_float(value)])


def read_series_csv(path: str, source_label: str = "") -> SnapshotSeries:
    """Read a series written by `write_series_csv`"""
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as error:
        raise ParseError(f"{path} is empty") from error
    except (pd.errors.ParserError, UnicodeDecodeError) as error:
        raise ParseError(f"{path}: {error}") from error
    if list(df.columns) != SERIES_FIELDNAMES:
        raise ParseError(
            f"{path}: expected header {','.join(SERIES_FIELDNAMES)}, "
            f"got {','.join(map(str, df.columns))}",
            line=1,
        )
    timestamps = np.empty(len(df))
    values = np.empty(len(df))
    for row, (timestamp, value) in enumerate(zip(df["timestamp"], df["value"])):
        try:
            timestamps[row] = float(timestamp)
            values[row] = float(value) if value != "" else np.nan
        except ValueError as error:
            raise ParseError(f"{path}: {error}", line=row + 2) from error
    return SnapshotSeries(timestamps, values, source_label=source_label or path)
