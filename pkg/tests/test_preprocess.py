import math

import numpy as np
import pytest

from conftest import series_of
from prognost.errors import (
    ConfigError,
    ConstantSeriesError,
    DataError,
    EmptyDatasetError,
    GapTooLargeError,
    InsufficientDataError,
    ParseError,
    SplitError,
    ValidationError,
)
from prognost.fixtures import degradation_series
from prognost.model.series import SnapshotSeries, read_series_csv, write_series_csv
from prognost.preprocess import (
    MinMaxScaler,
    apply_scaler,
    fill_missing,
    fit_minmax,
    make_windows,
    prepare_dataset,
    remove_outliers,
    split_point,
    split_train_test,
    write_indexed_csv,
    write_windows_csv,
)


def test_series_rejects_unordered_timestamps():
    with pytest.raises(ValidationError):
        SnapshotSeries(np.array([0.0, 2.0, 1.0]), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ValidationError):
        SnapshotSeries(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    with pytest.raises(DataError):
        SnapshotSeries(np.array([0.0, 1.0]), np.array([1.0]))


def test_series_is_immutable_but_inputs_are_not():
    values = np.array([1.0, 2.0])
    series = series_of(values)
    with pytest.raises(ValueError):
        series.values[0] = 5.0
    values[0] = 5.0
    assert series.values[0] == 1.0


def test_series_csv_round_trip(tmp_path):
    series = SnapshotSeries(
        np.array([1076426559.0, 1076427159.0, 1076427759.5]),
        np.array([0.07385406712929358, 0.1, -3e-17]),
    )
    path = str(tmp_path / "series.csv")
    write_series_csv(series, path)
    with open(path, encoding="utf-8") as series_file:
        assert series_file.readline() == "timestamp,value\n"
    back = read_series_csv(path)
    np.testing.assert_array_equal(back.timestamps, series.timestamps)
    np.testing.assert_array_equal(back.values, series.values)


def test_series_csv_keeps_missing(tmp_path):
    path = tmp_path / "series.csv"
    path.write_text("timestamp,value\n0,1\n1,\n2,3\n")
    series = read_series_csv(str(path))
    assert np.isnan(series.values[1])


def test_series_csv_wrong_header(tmp_path):
    path = tmp_path / "series.csv"
    path.write_text("t,v\n0,1\n")
    with pytest.raises(ParseError):
        read_series_csv(str(path))


def test_remove_outliers_spike():
    series, replaced = remove_outliers(series_of([1, 1, 1, 100, 1, 1, 1]), window=5, k=5)
    assert replaced == [3]
    np.testing.assert_array_equal(series.values, [1, 1, 1, 1, 1, 1, 1])


def test_remove_outliers_flat():
    original = series_of([1, 1, 1, 1])
    series, replaced = remove_outliers(original, window=3, k=1)
    assert replaced == []
    np.testing.assert_array_equal(series.values, original.values)


def test_remove_outliers_linear():
    original = series_of(np.arange(10, dtype=np.float64))
    series, replaced = remove_outliers(original, window=5, k=5)
    assert replaced == []
    np.testing.assert_array_equal(series.values, original.values)


def test_remove_outliers_short_series():
    series, replaced = remove_outliers(series_of([1.0, 1000.0]))
    assert replaced == []
    np.testing.assert_array_equal(series.values, [1.0, 1000.0])


def test_remove_outliers_is_idempotent(rng):
    for trial in range(300):
        values = rng.normal(size=40)
        if trial % 2:
            values[rng.choice(40, size=3, replace=False)] += 30.0
        once, _ = remove_outliers(series_of(values), window=11, k=5)
        twice, again = remove_outliers(once, window=11, k=5)
        assert again == [], trial
        np.testing.assert_array_equal(twice.values, once.values)


@pytest.mark.parametrize("window, k", [(4, 5.0), (1, 5.0), (11, 0.0), (11, -1.0)])
def test_remove_outliers_bad_parameters(window, k):
    with pytest.raises(ConfigError):
        remove_outliers(series_of([1.0, 2.0, 3.0]), window=window, k=k)


def test_remove_outliers_needs_finite():
    with pytest.raises(DataError):
        remove_outliers(series_of([1.0, math.nan, 3.0, 4.0]))


def test_fill_missing_midpoint():
    series = fill_missing(series_of([1.0, math.nan, 3.0]), max_gap=1)
    np.testing.assert_array_equal(series.values, [1.0, 2.0, 3.0])


def test_fill_missing_uses_timestamps():
    series = fill_missing(
        SnapshotSeries(np.array([0.0, 1.0, 4.0]), np.array([0.0, math.nan, 4.0])), max_gap=1
    )
    np.testing.assert_array_equal(series.values, [0.0, 1.0, 4.0])


def test_fill_missing_drops_edges():
    series = fill_missing(series_of([math.nan, 1.0, 2.0, math.nan]))
    np.testing.assert_array_equal(series.values, [1.0, 2.0])
    np.testing.assert_array_equal(series.timestamps, [1.0, 2.0])


def test_fill_missing_gap_too_large():
    with pytest.raises(GapTooLargeError) as info:
        fill_missing(series_of([1.0, math.nan, math.nan, 4.0]), max_gap=1)
    assert (info.value.start, info.value.end) == (1, 3)
    assert "split" in str(info.value)


def test_fill_missing_all_missing():
    with pytest.raises(EmptyDatasetError):
        fill_missing(series_of([math.nan, math.nan]))


def test_fit_minmax():
    scaler = fit_minmax(series_of([1.0, 2.0, 3.0]))
    assert (scaler.min, scaler.max) == (1.0, 3.0)


def test_fit_minmax_constant():
    with pytest.raises(ConstantSeriesError):
        fit_minmax(series_of([5.0, 5.0, 5.0]))
    with pytest.raises(ConstantSeriesError):
        MinMaxScaler(2.0, 2.0)


def test_apply_scaler():
    scaler = MinMaxScaler(1.0, 3.0)
    forward = apply_scaler(scaler, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(forward.values, [0.0, 0.5, 1.0])
    assert not forward.out_of_range
    inverse = apply_scaler(scaler, [0.0, 0.5, 1.0], "inverse")
    np.testing.assert_array_equal(inverse.values, [1.0, 2.0, 3.0])
    outside = apply_scaler(scaler, [4.0])
    np.testing.assert_array_equal(outside.values, [1.5])
    assert outside.out_of_range
    with pytest.raises(ConfigError):
        apply_scaler(scaler, [1.0], "sideways")


def test_scaler_round_trip_and_extremes(rng):
    for _ in range(20):
        values = rng.normal(loc=rng.uniform(-50, 50), scale=rng.uniform(0.01, 10), size=100)
        scaler = fit_minmax(series_of(values))
        scaled = scaler.forward(values)
        assert np.max(np.abs(scaler.inverse(scaled) - values)) < 1e-12
        assert scaled[np.argmin(values)] == 0.0
        assert scaled[np.argmax(values)] == 1.0


def test_make_windows():
    dataset = make_windows(series_of([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]), 5)
    np.testing.assert_array_equal(dataset.windows, [[1, 2, 3, 4, 5], [2, 3, 4, 5, 6]])
    np.testing.assert_array_equal(dataset.targets, [6, 7])
    np.testing.assert_array_equal(dataset.origin_indices, [5, 6])
    np.testing.assert_array_equal(dataset.timestamps, [5.0, 6.0])


def test_make_windows_boundaries():
    assert len(make_windows(series_of(np.arange(6.0)), 5)) == 1
    with pytest.raises(InsufficientDataError):
        make_windows(series_of(np.arange(5.0)), 5)
    with pytest.raises(ConfigError):
        make_windows(series_of(np.arange(5.0)), 0)


def test_window_contiguity(rng):
    values = rng.normal(size=120)
    dataset = make_windows(series_of(values), 7)
    assert len(dataset) == len(dataset.windows) == 120 - 7
    np.testing.assert_array_equal(dataset.targets, values[7:])
    for i in rng.integers(0, len(dataset), size=10):
        np.testing.assert_array_equal(dataset.windows[i], values[i : i + 7])
        assert dataset.targets[i] == values[i + 7]


@pytest.mark.parametrize("count, train, test", [(10, 7, 3), (979, 685, 294)])
def test_split_counts(count, train, test):
    dataset = make_windows(series_of(np.arange(count + 5.0)), 5)
    split = split_train_test(dataset, 0.7)
    assert (len(split.train), len(split.test)) == (train, test)
    assert split.train.origin_indices.max() < split.test.origin_indices.min()


def test_split_empty_side():
    dataset = make_windows(series_of(np.arange(6.0)), 5)
    with pytest.raises(SplitError):
        split_train_test(dataset, 0.7)
    with pytest.raises(ConfigError):
        split_point(10, 1.0)


def test_prepare_dataset_fits_scaler_on_training_slice():
    series = degradation_series(300, seed=3)
    split, scaler = prepare_dataset(series, window_length=5, ratio=0.7)
    train_count = math.floor(0.7 * (300 - 5))
    head = series.values[: train_count + 5]
    assert (scaler.min, scaler.max) == (head.min(), head.max())
    assert len(split.train) == train_count
    assert split.train.windows.min() >= 0.0
    assert split.train.windows.max() <= 1.0
    # the failure end runs past the training range
    assert split.test.targets.max() > 1.0


def test_prepare_dataset_with_given_scaler(sine):
    scaler = MinMaxScaler(-2.0, 2.0)
    split, used = prepare_dataset(sine, 5, 0.7, scaler=scaler)
    assert used is scaler
    np.testing.assert_allclose(split.test.targets, (sine.values[5:][len(split.train) :] + 2) / 4)


def test_window_and_indexed_csv(tmp_path):
    series = series_of([0.5, 1.0, 1.5, 2.0])
    windows_path = tmp_path / "windows.csv"
    write_windows_csv(make_windows(series, 2), str(windows_path))
    assert windows_path.read_text() == "w1,w2,target\n0.5,1,1.5\n1,1.5,2\n"
    indexed_path = tmp_path / "indexed.csv"
    write_indexed_csv(series, str(indexed_path))
    assert indexed_path.read_text() == "index,value\n0,0.5\n1,1\n2,1.5\n3,2\n"
