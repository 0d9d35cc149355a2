"""Deterministic synthetic series for tests and offline runs"""

import numpy as np

from prognost.errors import ConfigError
from prognost.model.series import SnapshotSeries

FIXTURE_KINDS = ("sine", "degradation")

# Snapshots are ten minutes apart, as on the IMS rig
SNAPSHOT_INTERVAL = 600.0

SINE_PERIOD = 40


def sine_series(n: int) -> SnapshotSeries:
    """Noiseless sine with a period of 40 samples"""
    index = np.arange(n, dtype=np.float64)
    return SnapshotSeries(
        index * SNAPSHOT_INTERVAL,
        np.sin(2.0 * np.pi * index / SINE_PERIOD),
        source_label="sine",
    )


def degradation_series(n: int, seed: int = 0) -> SnapshotSeries:
    """Run-to-failure shaped trend: a flat healthy stage with light noise,
    then a rise that steepens towards the end of life"""
    rng = np.random.Generator(np.random.PCG64(seed))
    life = np.linspace(0.0, 1.0, n)
    healthy = 0.07
    wear = 0.05 * np.clip(life - 0.6, 0.0, None) / 0.4
    failure = 0.4 * np.clip(life - 0.85, 0.0, None) ** 2 / 0.15 ** 2
    noise = rng.normal(0.0, 0.002, size=n)
    return SnapshotSeries(
        np.arange(n, dtype=np.float64) * SNAPSHOT_INTERVAL,
        healthy + wear + failure + noise,
        source_label="degradation",
    )


def make_fixture(kind: str, n: int, seed: int = 0) -> SnapshotSeries:
    if n < 2:
        raise ConfigError(f"a fixture needs at least 2 points, got {n}")
    if kind == "sine":
        return sine_series(n)
    if kind == "degradation":
        return degradation_series(n, seed)
    raise ConfigError(f"fixture kind must be one of {FIXTURE_KINDS}, got {kind!r}")
