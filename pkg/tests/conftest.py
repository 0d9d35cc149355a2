import os

import numpy as np
import pytest

from prognost.fixtures import sine_series
from prognost.model.network import ModelParams, init_params
from prognost.model.series import SnapshotSeries


@pytest.fixture
def small_model() -> ModelParams:
    return init_params((4, 3), seed=7, window_length=5)


@pytest.fixture
def sine() -> SnapshotSeries:
    return sine_series(200)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))


def series_of(values, label: str = "test") -> SnapshotSeries:
    return SnapshotSeries(np.arange(len(values), dtype=np.float64), values, source_label=label)


@pytest.fixture
def ims_dir() -> str:
    path = os.environ.get("PROGNOST_IMS_DIR")
    if not path:
        pytest.skip("PROGNOST_IMS_DIR not set")
    return path


@pytest.fixture
def njhpp_csv() -> str:
    path = os.environ.get("PROGNOST_NJHPP_CSV")
    if not path:
        pytest.skip("PROGNOST_NJHPP_CSV not set")
    return path
