"""Forecast metrics and one-step-ahead prediction traces"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

import prognost.constants as constants
from prognost.errors import (
    ConfigError,
    DimensionError,
    InsufficientDataError,
    MetricUndefinedError,
)
from prognost.model.network import ModelParams, predict
from prognost.preprocess import MinMaxScaler, WindowedDataset
from prognost.util import format_float

Array = npt.NDArray[np.float64]

TRACE_FIELDNAMES = ["origin_index", "timestamp", "actual", "predicted", "split"]
METRICS_FIELDNAMES = ["dataset", "space", "n", "rmse", "mae", "nmae", "mape", "mape_excluded"]

SPACES = ("scaled", "original")


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    nmae: float
    # a fraction, not a percentage
    mape: float
    n: int
    mape_excluded: int
    space: str = "scaled"

    def __post_init__(self) -> None:
        # power-mean inequality; the tolerance covers rounding in the two means
        assert self.rmse >= self.mae * (1 - 1e-12) >= 0, (self.rmse, self.mae)
        assert 0 <= self.mape_excluded < self.n


def compute_metrics(
    actual: npt.ArrayLike, predicted: npt.ArrayLike, space: str = "scaled"
) -> MetricsReport:
    """RMSE, MAE, NMAE (MAE over the range of the actuals) and MAPE (over the
    terms whose actual value is not near zero)"""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape or actual.ndim != 1:
        raise DimensionError(f"{actual.shape} actuals for {predicted.shape} predictions")
    if len(actual) == 0:
        raise InsufficientDataError("metrics of an empty series")

    error = actual - predicted
    absolute = np.abs(error)
    rmse = float(np.sqrt(np.mean(error * error)))
    mae = float(np.mean(absolute))

    spread = float(np.max(actual) - np.min(actual))
    if spread == 0:
        raise MetricUndefinedError("NMAE is undefined for constant actual values", rmse, mae)
    nmae = mae / spread

    included = np.abs(actual) >= constants.mape_zero_tolerance
    if not included.any():
        raise MetricUndefinedError(
            "MAPE is undefined: every actual value is near zero", rmse, mae
        )
    mape = float(np.mean(absolute[included] / np.abs(actual[included])))

    return MetricsReport(
        rmse=rmse,
        mae=mae,
        nmae=nmae,
        mape=mape,
        n=len(actual),
        mape_excluded=int(np.count_nonzero(~included)),
        space=space,
    )


@dataclass(frozen=True)
class PredictionTrace:
    """One row per target: where it sits in the series, the actual and
    predicted values, and which side of the split it belongs to"""

    origin_indices: npt.NDArray[np.int64]
    timestamps: Array
    actual: Array
    predicted: Array
    splits: Sequence[str]
    space: str = "scaled"

    def __len__(self) -> int:
        return len(self.actual)

    def metrics(self) -> MetricsReport:
        return compute_metrics(self.actual, self.predicted, self.space)

    @staticmethod
    def concat(traces: Sequence[PredictionTrace]) -> PredictionTrace:
        return PredictionTrace(
            origin_indices=np.concatenate([trace.origin_indices for trace in traces]),
            timestamps=np.concatenate([trace.timestamps for trace in traces]),
            actual=np.concatenate([trace.actual for trace in traces]),
            predicted=np.concatenate([trace.predicted for trace in traces]),
            splits=[split for trace in traces for split in trace.splits],
            space=traces[0].space,
        )


def one_step_predictions(
    model: ModelParams,
    dataset: WindowedDataset,
    scaler: Optional[MinMaxScaler] = None,
    space: str = "scaled",
    split: str = "test",
) -> PredictionTrace:
    """Predict every target from the true preceding values. In original space
    both columns are mapped back through the scaler."""
    if space not in SPACES:
        raise ConfigError(f"space must be one of {SPACES}, got {space!r}")
    if model.window_length is not None and model.window_length != dataset.window_length:
        raise DimensionError(
            f"model expects windows of {model.window_length}, dataset has {dataset.window_length}"
        )
    if space == "original" and scaler is None:
        raise ConfigError("original-space predictions need a scaler")

    actual = dataset.targets
    predicted = predict(model, dataset.windows)
    if space == "original":
        assert scaler is not None
        actual = scaler.inverse(actual)
        predicted = scaler.inverse(predicted)
    return PredictionTrace(
        origin_indices=dataset.origin_indices,
        timestamps=dataset.timestamps,
        actual=actual,
        predicted=predicted,
        splits=[split] * len(actual),
        space=space,
    )


def persistence_baseline(
    dataset: WindowedDataset,
    scaler: Optional[MinMaxScaler] = None,
    space: str = "scaled",
    split: str = "test",
) -> PredictionTrace:
    """Trace of the naive forecaster that repeats the last observed value"""
    if space == "original" and scaler is None:
        raise ConfigError("original-space predictions need a scaler")
    actual = dataset.targets
    predicted = dataset.windows[:, -1].copy()
    if space == "original":
        assert scaler is not None
        actual = scaler.inverse(actual)
        predicted = scaler.inverse(predicted)
    return PredictionTrace(
        origin_indices=dataset.origin_indices,
        timestamps=dataset.timestamps,
        actual=actual,
        predicted=predicted,
        splits=[split] * len(actual),
        space=space,
    )


def compute_persistence_baseline(dataset: WindowedDataset) -> MetricsReport:
    """Metrics of the persistence forecaster in scaled space"""
    return persistence_baseline(dataset).metrics()


def write_trace_csv(trace: PredictionTrace, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as trace_file:
        writer = csv.writer(trace_file, lineterminator="\n")
        writer.writerow(TRACE_FIELDNAMES)
        for row in zip(
            trace.origin_indices, trace.timestamps, trace.actual, trace.predicted, trace.splits
        ):
            index, timestamp, actual, predicted, split = row
            writer.writerow(
                [int(index), format_float(timestamp), format_float(actual), format_float(predicted), split]
            )


def write_metrics_csv(rows: List[Tuple[str, MetricsReport]], path: str) -> None:
    """Write (dataset label, MetricsReport) pairs, one row per dataset"""
    with open(path, "w", encoding="utf-8", newline="") as metrics_file:
        writer = csv.writer(metrics_file, lineterminator="\n")
        writer.writerow(METRICS_FIELDNAMES)
        for label, report in rows:
            writer.writerow(
                [
                    label,
                    report.space,
                    report.n,
                    format_float(report.rmse),
                    format_float(report.mae),
                    format_float(report.nmae),
                    format_float(report.mape),
                    report.mape_excluded,
                ]
            )
