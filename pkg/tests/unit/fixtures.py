#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
import pytest

from detector_config import PreprocessConfig, SynthConfig
from signal_io import NormalizedSeries, RawSeries, normalize

SMALL_PREPROCESS = PreprocessConfig(
    look_back=4,
    look_ahead=1,
    in_grid=4,
    out_grid=4,
    in_algorithm="static",
    out_algorithm="static",
)

SMALL_SYNTH = SynthConfig(
    name="small",
    train_length=3_000,
    test_length=2_000,
    ramp_fast_samples=40,
    ramp_slow_samples=60,
    ramp_down_samples=20,
    periodic_period=7,
    anomaly_count=4,
    step_duration=20,
    min_gap=50,
    seed=11,
)


def make_series(
    *channels: Sequence[float],
    name: str = "series",
    anomaly_intervals: Sequence[Tuple[int, int]] = (),
) -> RawSeries:
    """Build a raw series named `c0`, `c1`, ... from channel value lists."""
    return RawSeries(
        name=name,
        channel_names=tuple(f"c{index}" for index in range(len(channels))),
        channels=np.array(channels, dtype=np.float64),
        anomaly_intervals=tuple(anomaly_intervals),
    )


def make_normalized(
    *channels: Sequence[float],
    name: str = "series",
    anomaly_intervals: Sequence[Tuple[int, int]] = (),
) -> NormalizedSeries:
    """Build a series already in [0, 1] with unit bounds."""
    return normalize(
        make_series(*channels, name=name, anomaly_intervals=anomaly_intervals),
        bounds=tuple((0.0, 1.0) for _ in channels),
    )


def sawtooth(length: int, period: int, amplitude: float = 1.0) -> np.ndarray:
    """Return a ramp repeating every `period` samples over [0, amplitude)."""
    return amplitude * (np.arange(length) % period) / period


class SeriesFixtures:
    @pytest.fixture(autouse=True)
    def workspace(self, tmp_path):
        self.tmp_path: Path = tmp_path

    def write_text(self, name: str, text: str) -> Path:
        path = self.tmp_path / name
        path.write_text(text)
        return path
