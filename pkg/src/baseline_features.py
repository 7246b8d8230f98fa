#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Windowed statistical features for one-class baselines and corpus diagnostics."""

import dataclasses
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from artifacts import write_csv_rows
from signal_io import RawSeries

logger = logging.getLogger(__name__)

MIN_WINDOW = 8
FEATURE_NAMES = (
    "avg_power",
    "mean",
    "median_frequency",
    "std",
    "skewness",
    "kurtosis",
    "ctm",
    "correlation",
    "lzc",
)


class FeatureError(Exception):
    """Raised when features cannot be extracted from a window or a series."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


@dataclasses.dataclass(frozen=True)
class FeatureWindow:
    """Features of one window of one channel.

    Attributes:
        size: Number of samples in the window.
        values: One value per name in `FEATURE_NAMES`.
        degenerate: Names of the features reported as 0 because they are undefined.
    """

    size: int
    values: Tuple[float, ...]
    degenerate: Tuple[str, ...] = ()

    def __getitem__(self, name: str) -> float:
        return self.values[FEATURE_NAMES.index(name)]


@dataclasses.dataclass(frozen=True)
class FeatureMatrix:
    """Rows of flattened per-channel features over a sliding window."""

    header: Tuple[str, ...]
    rows: np.ndarray
    starts: np.ndarray
    window_size: int
    degenerate_windows: int = 0


def lempel_ziv_complexity(bits: Sequence[int]) -> int:
    """Return the number of distinct phrases of a binary sequence (Kaspar-Schuster)."""
    s = [int(bit) for bit in bits]
    n = len(s)
    if n < 2:
        return n
    complexity, prefix, i, k, k_max = 1, 1, 0, 1, 1
    while True:
        if s[i + k - 1] == s[prefix + k - 1]:
            k += 1
            if prefix + k > n:
                complexity += 1
                break
        else:
            k_max = max(k, k_max)
            i += 1
            if i == prefix:
                complexity += 1
                prefix += k_max
                if prefix + 1 > n:
                    break
                i, k, k_max = 0, 1, 1
            else:
                k = 1
    return complexity


def shape_statistics(x: np.ndarray) -> Optional[Tuple[float, float]]:
    """Return the bias-corrected skewness and kurtosis (normal = 3), or None for flat data."""
    n = x.size
    centered = x - x.mean()
    m2 = float(np.mean(centered**2))
    if n < 4 or np.ptp(x) == 0.0 or m2 <= 0.0:
        return None
    m3 = float(np.mean(centered**3))
    m4 = float(np.mean(centered**4))
    skewness = math.sqrt(n * (n - 1)) / (n - 2) * m3 / m2**1.5
    k1 = m4 / m2**2
    kurtosis = (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * k1 - 3 * (n - 1)) + 3
    return skewness, kurtosis


def _median_frequency(x: np.ndarray, sample_period: Optional[float]) -> Optional[float]:
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    total = power.sum()
    if total <= 0.0:
        return None
    cumulative = np.cumsum(power)
    index = int(np.searchsorted(cumulative, total / 2.0))
    frequency = index / x.size
    return frequency / sample_period if sample_period else frequency


def extract(
    window: Sequence[float],
    sample_period: Optional[float] = None,
    ctm_radius_factor: float = 0.1,
) -> FeatureWindow:
    """Compute every feature of a single window.

    The median frequency is in cycles per sample, or in Hz when `sample_period`
    is given. Features that are undefined for the window (zero variance, flat
    differences) are reported as 0 and named in `degenerate`.

    Raises:
        FeatureError: If the window holds fewer than 8 samples or non-finite values.
    """
    x = np.asarray(window, dtype=np.float64).ravel()
    n = x.size
    if n < MIN_WINDOW:
        raise FeatureError(f"A window needs at least {MIN_WINDOW} samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise FeatureError("Window holds non-finite values")
    degenerate: List[str] = []
    values = dict.fromkeys(FEATURE_NAMES, 0.0)
    values["avg_power"] = float(np.mean(x**2))
    values["mean"] = float(np.mean(x))
    values["std"] = float(np.std(x, ddof=1))
    shape = shape_statistics(x)
    if shape is None:
        degenerate += ["std", "skewness", "kurtosis"]
    else:
        values["skewness"], values["kurtosis"] = shape
    median_frequency = _median_frequency(x, sample_period)
    if median_frequency is None:
        degenerate.append("median_frequency")
    else:
        values["median_frequency"] = median_frequency
    diffs = np.diff(x)
    scatter_x, scatter_y = diffs[:-1], diffs[1:]
    radius = ctm_radius_factor * float(np.std(diffs, ddof=1))
    if radius > 0.0:
        values["ctm"] = float(np.mean(np.hypot(scatter_x, scatter_y) < radius))
    else:
        degenerate.append("ctm")
    if np.std(scatter_x) > 0.0 and np.std(scatter_y) > 0.0:
        values["correlation"] = float(np.corrcoef(scatter_x, scatter_y)[0, 1])
    else:
        degenerate.append("correlation")
    bits = (x > np.median(x)).astype(np.int8)
    values["lzc"] = lempel_ziv_complexity(bits) / n
    return FeatureWindow(
        size=n,
        values=tuple(float(values[name]) for name in FEATURE_NAMES),
        degenerate=tuple(dict.fromkeys(degenerate)),
    )


def window_count(length: int, window_size: int, hop: int) -> int:
    """Return `floor((length - N) / hop) + 1`, the number of windows of a scan."""
    return (length - window_size) // hop + 1


def window_scan(
    series: RawSeries,
    window_size: int,
    hop: Optional[int] = None,
    ctm_radius_factor: float = 0.1,
) -> FeatureMatrix:
    """Extract the features of every channel over a sliding window.

    Args:
        series: Series to scan; its sample period converts median frequencies to Hz.
        window_size: Samples per window.
        hop: Samples between window starts; defaults to non-overlapping windows.
        ctm_radius_factor: CTM radius relative to the deviation of the differences.

    Raises:
        FeatureError: If the series is shorter than one window or hop is not positive.
    """
    hop = window_size if hop is None else hop
    if hop < 1:
        raise FeatureError(f"Hop must be positive, got {hop}")
    if series.length < window_size:
        raise FeatureError(f"Series of {series.length} samples is shorter than {window_size}")
    count = window_count(series.length, window_size, hop)
    starts = np.arange(count) * hop
    header = tuple(
        f"{channel}.{feature}" for channel in series.channel_names for feature in FEATURE_NAMES
    )
    rows = np.zeros((count, len(header)))
    degenerate_windows = 0
    for row, start in enumerate(starts.tolist()):
        flagged = False
        for channel, samples in enumerate(series.channels):
            features = extract(
                samples[start : start + window_size],
                sample_period=series.sample_period,
                ctm_radius_factor=ctm_radius_factor,
            )
            offset = channel * len(FEATURE_NAMES)
            rows[row, offset : offset + len(FEATURE_NAMES)] = features.values
            flagged = flagged or bool(features.degenerate)
        degenerate_windows += flagged
    logger.info(
        "Scanned %s windows of %s samples (%s degenerate)", count, window_size, degenerate_windows
    )
    return FeatureMatrix(
        header=header,
        rows=rows,
        starts=starts,
        window_size=window_size,
        degenerate_windows=degenerate_windows,
    )


def write_feature_csv(matrix: FeatureMatrix, path: Path) -> None:
    """Write a feature matrix with a `channel.feature` header and a leading `start` column."""
    rows = (
        [int(start), *(repr(float(value)) for value in row)]
        for start, row in zip(matrix.starts, matrix.rows)
    )
    write_csv_rows(path, ("start", *matrix.header), rows)
