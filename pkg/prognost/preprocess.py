"""Clean, normalize, window and split a SnapshotSeries into training material"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd

import prognost.constants as constants
from prognost.errors import (
    ConfigError,
    ConstantSeriesError,
    DataError,
    EmptyDatasetError,
    GapTooLargeError,
    InsufficientDataError,
    SplitError,
)
from prognost.model.series import SnapshotSeries
from prognost.util import format_float

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]


@dataclass(frozen=True)
class MinMaxScaler:
    """Affine map of [min, max] onto [0, 1]"""

    min: float
    max: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise DataError("scaler bounds must be finite")
        if not self.max > self.min:
            raise ConstantSeriesError(
                f"scaler needs max > min, got min={self.min!r} max={self.max!r}"
            )

    def forward(self, values: npt.ArrayLike) -> Array:
        return (np.asarray(values, dtype=np.float64) - self.min) / (self.max - self.min)

    def inverse(self, values: npt.ArrayLike) -> Array:
        return np.asarray(values, dtype=np.float64) * (self.max - self.min) + self.min


class ScaledValues(NamedTuple):
    values: Array
    # True when some input lay outside the range the scaler was fit on
    out_of_range: bool


@dataclass(frozen=True)
class WindowedDataset:
    """Sliding windows of W consecutive values, each paired with the value
    that follows it"""

    windows: Array
    targets: Array
    window_length: int
    origin_indices: npt.NDArray[np.int64]
    timestamps: Array

    def __len__(self) -> int:
        return len(self.targets)

    def slice(self, start: int, stop: int) -> WindowedDataset:
        return WindowedDataset(
            windows=self.windows[start:stop],
            targets=self.targets[start:stop],
            window_length=self.window_length,
            origin_indices=self.origin_indices[start:stop],
            timestamps=self.timestamps[start:stop],
        )


@dataclass(frozen=True)
class SplitDataset:
    train: WindowedDataset
    test: WindowedDataset
    ratio: float


def _rolling(values: Array, window: int) -> Tuple[Array, Array]:
    """Centered rolling median and median absolute deviation. Windows are
    truncated at the series edges."""
    rolling = pd.Series(values).rolling(window, center=True, min_periods=1)
    medians = rolling.median().to_numpy()
    deviations = rolling.apply(
        lambda w: np.median(np.abs(w - np.median(w))), raw=True
    ).to_numpy()
    return medians, deviations


def remove_outliers(
    series: SnapshotSeries,
    window: int = constants.default_outlier_window,
    k: float = constants.default_outlier_k,
) -> Tuple[SnapshotSeries, List[int]]:
    """Replace points further than k rolling MADs from the rolling median by
    that median, repeating until a pass replaces nothing so that the result
    is a fixed point. Returns the cleaned series and every replaced index."""
    if window < 3 or window % 2 == 0:
        raise ConfigError(f"outlier window must be odd and >= 3, got {window}")
    if not k > 0:
        raise ConfigError(f"outlier threshold k must be positive, got {k}")

    series.require_finite()
    if len(series) < 3:
        return series, []

    values = series.values
    replaced = np.zeros(len(values), dtype=bool)
    for passes in range(1, len(values) + 1):
        medians, deviations = _rolling(values, window)
        outliers = np.abs(values - medians) > k * deviations
        if not outliers.any():
            break
        replaced |= outliers
        values = np.where(outliers, medians, values)
    else:
        logger.warning(
            "Outlier removal on %s did not settle after %d passes", series.source_label, passes
        )

    if not replaced.any():
        return series, []
    indices = np.flatnonzero(replaced).tolist()
    logger.info(
        "Replaced %d outliers in %s over %d passes", len(indices), series.source_label, passes - 1
    )
    return series.with_values(values), indices


def fill_missing(
    series: SnapshotSeries, max_gap: int = constants.default_max_gap
) -> SnapshotSeries:
    """Interpolate short runs of missing values, drop missing values at either
    end, and refuse runs longer than max_gap"""
    finite = np.isfinite(series.values)
    if not finite.any():
        raise EmptyDatasetError(f"series {series.source_label!r} has no values")

    first = int(np.argmax(finite))
    last = len(finite) - int(np.argmax(finite[::-1]))
    if first > 0 or last < len(finite):
        logger.info(
            "Dropping %d leading and %d trailing missing values",
            first,
            len(finite) - last,
        )
    timestamps = series.timestamps[first:last]
    values = series.values[first:last]
    finite = finite[first:last]

    gaps = 0
    index = 0
    while index < len(values):
        if finite[index]:
            index += 1
            continue
        end = index
        while not finite[end]:
            end += 1
        if end - index > max_gap:
            raise GapTooLargeError(first + index, first + end, max_gap)
        gaps += 1
        index = end

    if gaps:
        logger.info("Interpolated %d gaps", gaps)
        values = np.interp(timestamps, timestamps[finite], values[finite])

    return SnapshotSeries(
        timestamps, values, source_label=series.source_label, channel=series.channel
    )


def fit_minmax(series: SnapshotSeries) -> MinMaxScaler:
    """Fit a min-max scaler to the values of a series"""
    if len(series) == 0:
        raise EmptyDatasetError("cannot fit a scaler to an empty series")
    values = series.require_finite().values
    low = float(np.min(values))
    high = float(np.max(values))
    if high == low:
        raise ConstantSeriesError(
            f"series {series.source_label!r} is constant ({format_float(low)}); "
            "min-max scaling is undefined"
        )
    return MinMaxScaler(min=low, max=high)


def apply_scaler(
    scaler: MinMaxScaler, values: npt.ArrayLike, direction: str = "forward"
) -> ScaledValues:
    """Scale values forward into [0, 1] space or back. Inputs outside the
    fitted range extrapolate linearly and set the out_of_range flag."""
    values = np.asarray(values, dtype=np.float64)
    if direction == "forward":
        result = scaler.forward(values)
        out_of_range = bool(np.any((values < scaler.min) | (values > scaler.max)))
    elif direction == "inverse":
        result = scaler.inverse(values)
        out_of_range = bool(np.any((values < 0) | (values > 1)))
    else:
        raise ConfigError(f"direction must be forward or inverse, got {direction!r}")
    return ScaledValues(result, out_of_range)


def make_windows(
    series: SnapshotSeries, window_length: int = constants.default_window
) -> WindowedDataset:
    """Stride-1 windows: window i is series[i:i+W] and its target series[i+W]"""
    if window_length < 1:
        raise ConfigError(f"window length must be at least 1, got {window_length}")
    values = series.require_finite().values
    if len(values) <= window_length:
        raise InsufficientDataError(
            f"series of length {len(values)} is too short for windows of {window_length}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(values[:-1], window_length)
    origin = np.arange(window_length, len(values), dtype=np.int64)
    return WindowedDataset(
        windows=np.ascontiguousarray(windows),
        targets=values[window_length:].copy(),
        window_length=window_length,
        origin_indices=origin,
        timestamps=series.timestamps[window_length:].copy(),
    )


def split_point(count: int, ratio: float) -> int:
    """Number of windows on the training side"""
    if not 0 < ratio < 1:
        raise ConfigError(f"split ratio must lie strictly between 0 and 1, got {ratio}")
    train_count = math.floor(ratio * count)
    if train_count == 0 or train_count == count:
        raise SplitError(
            f"a {ratio} split of {count} windows leaves one side empty"
        )
    return train_count


def split_train_test(
    dataset: WindowedDataset, ratio: float = constants.default_split_ratio
) -> SplitDataset:
    """Chronological split: the first floor(ratio * N) windows train, the rest test"""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    train_count = split_point(len(dataset), ratio)
    return SplitDataset(
        train=dataset.slice(0, train_count),
        test=dataset.slice(train_count, len(dataset)),
        ratio=ratio,
    )


def prepare_dataset(
    series: SnapshotSeries,
    window_length: int = constants.default_window,
    ratio: float = constants.default_split_ratio,
    scaler: Optional[MinMaxScaler] = None,
) -> Tuple[SplitDataset, MinMaxScaler]:
    """Scale, window and split a clean series. Unless a scaler is given, it is
    fit on the values the training windows touch, so the test side never
    influences the scaling."""
    series.require_finite()
    if len(series) <= window_length:
        raise InsufficientDataError(
            f"series of length {len(series)} is too short for windows of {window_length}"
        )
    if scaler is None:
        train_count = split_point(len(series) - window_length, ratio)
        scaler = fit_minmax(_head(series, train_count + window_length))
    scaled = series.with_values(scaler.forward(series.values))
    return split_train_test(make_windows(scaled, window_length), ratio), scaler


def _head(series: SnapshotSeries, count: int) -> SnapshotSeries:
    return SnapshotSeries(
        series.timestamps[:count],
        series.values[:count],
        source_label=series.source_label,
        channel=series.channel,
    )


def write_windows_csv(dataset: WindowedDataset, path: str) -> None:
    """Write `w1,...,wW,target` rows"""
    fieldnames = [f"w{i + 1}" for i in range(dataset.window_length)] + ["target"]
    with open(path, "w", encoding="utf-8", newline="") as windows_file:
        writer = csv.writer(windows_file, lineterminator="\n")
        writer.writerow(fieldnames)
        for window, target in zip(dataset.windows, dataset.targets):
            writer.writerow([format_float(value) for value in window] + [format_float(target)])


def write_indexed_csv(series: SnapshotSeries, path: str) -> None:
    """Write a preprocessed series as `index,value` rows"""
    with open(path, "w", encoding="utf-8", newline="") as series_file:
        writer = csv.writer(series_file, lineterminator="\n")
        writer.writerow(["index", "value"])
        for index, value in enumerate(series.values):
            writer.writerow([index, format_float(value)])
