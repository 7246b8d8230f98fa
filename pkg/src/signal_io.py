#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Multi-channel series ingestion and preprocessing for the detector.

Covers CSV loading, physical unit conversion, [0, 1] normalization, splitting,
decimation, history windowing with one-hot targets and random subsampling.
All series and datasets are immutable; every function returns new objects.
"""

import csv
import dataclasses
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from artifacts import render_csv, write_atomic
from detector_config import ChannelConversion, PreprocessConfig
from quantizer import QuantizationGrid, quantize_array

logger = logging.getLogger(__name__)

ANOMALY_COLUMN = "anomaly"

Interval = Tuple[int, int]
Bounds = Tuple[Tuple[float, float], ...]


class SignalIOError(Exception):
    """Raised when a series cannot be loaded or preprocessed."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class CsvParseError(SignalIOError):
    """Raised when a CSV row cannot be parsed."""

    def __init__(self, message: str, line_number: int):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class DegenerateRangeError(SignalIOError):
    """Raised when a constant channel would be normalized by its own range."""


class InvalidSplitError(SignalIOError):
    """Raised when a split would put an anomaly into the training part."""


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


def _check_intervals(intervals: Sequence[Interval], length: int) -> Tuple[Interval, ...]:
    checked: List[Interval] = []
    previous_end = 0
    for start, end in intervals:
        start, end = int(start), int(end)
        if not 0 <= start < end <= length:
            raise SignalIOError(f"Anomaly interval [{start}, {end}) is out of bounds")
        if start < previous_end:
            raise SignalIOError("Anomaly intervals must be sorted and disjoint")
        checked.append((start, end))
        previous_end = end
    return tuple(checked)


@dataclasses.dataclass(frozen=True, eq=False)
class RawSeries:
    """A named multi-channel series in acquisition or physical units.

    Attributes:
        name: Series label.
        channel_names: One name per channel.
        channels: Array of shape (num_channels, length).
        sample_period: Seconds per sample.
        anomaly_intervals: Sorted, disjoint `[start, end)` ground-truth spans.
    """

    name: str
    channel_names: Tuple[str, ...]
    channels: np.ndarray
    sample_period: float = 1.0
    anomaly_intervals: Tuple[Interval, ...] = ()

    def __post_init__(self):
        try:
            channels = np.array(self.channels, dtype=np.float64)
        except ValueError as exc:
            raise SignalIOError("All channels must have the same length") from exc
        if channels.ndim != 2:
            raise SignalIOError("All channels must have the same length")
        if len(self.channel_names) != channels.shape[0]:
            raise SignalIOError(
                f"{len(self.channel_names)} channel names for {channels.shape[0]} channels"
            )
        object.__setattr__(self, "channels", _frozen(channels))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(
            self,
            "anomaly_intervals",
            _check_intervals(self.anomaly_intervals, channels.shape[1]),
        )

    @property
    def length(self) -> int:
        """Number of samples per channel."""
        return int(self.channels.shape[1])


@dataclasses.dataclass(frozen=True, eq=False)
class NormalizedSeries(RawSeries):
    """A series whose every value lies in [0, 1].

    Attributes:
        norm_bounds: Per-channel `(min, max)` used for the affine map.
    """

    norm_bounds: Bounds = ()

    def __post_init__(self):
        super().__post_init__()
        if len(self.norm_bounds) != self.channels.shape[0]:
            raise SignalIOError("Normalization bounds are required for every channel")
        if self.channels.size and (self.channels.min() < 0.0 or self.channels.max() > 1.0):
            raise SignalIOError("Normalized values must lie in [0, 1]")
        object.__setattr__(
            self, "norm_bounds", tuple((float(lo), float(hi)) for lo, hi in self.norm_bounds)
        )


@dataclasses.dataclass(frozen=True, eq=False)
class WindowedDataset:
    """History windows of class indices with one-hot targets.

    Attributes:
        inputs: Array (num_examples, look_back, num_input_channels) of classes.
        targets: Array (num_examples, out_grid), one-hot rows.
        config: Preprocessing options the windows were built with.
        target_index: Series sample index predicted by every example.
    """

    inputs: np.ndarray
    targets: np.ndarray
    config: PreprocessConfig
    target_index: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 3 or self.targets.ndim != 2:
            raise SignalIOError("Inputs must be 3-D and targets 2-D")
        if not len(self.inputs) == len(self.targets) == len(self.target_index):
            raise SignalIOError("Inputs, targets and indices must have the same length")
        if self.targets.shape[1] != self.config.out_grid:
            raise SignalIOError("Target width must equal out_grid")
        in_grid = self.config.in_grid
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() >= in_grid):
            raise SignalIOError("Input classes must lie in [0, in_grid)")
        if self.targets.size and not np.array_equal(
            self.targets.sum(axis=1), np.ones(len(self.targets))
        ):
            raise SignalIOError("Every target row must be one-hot")
        for array in (self.inputs, self.targets, self.target_index):
            if array.flags.writeable:
                array.setflags(write=False)

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def target_classes(self) -> np.ndarray:
        """Class index of every target row."""
        return np.argmax(self.targets, axis=1)


def load_csv(
    path: Path,
    schema: Optional[Sequence[str]] = None,
    name: Optional[str] = None,
    sample_period: float = 1.0,
) -> RawSeries:
    """Load a series from a CSV file with a header row of channel names.

    An optional `anomaly` 0/1 column marks ground-truth anomalous samples; its
    contiguous runs of 1 become the anomaly intervals.

    Args:
        path: CSV file.
        schema: Channel names to read, in order; defaults to every non-anomaly column.
        name: Series label; defaults to the file stem.
        sample_period: Seconds per sample.

    Raises:
        CsvParseError: If a row is malformed; the error names its line.
        SignalIOError: If the file is missing, a column is missing or channels are ragged.
    """
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise SignalIOError(f"Could not open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = [column.strip() for column in next(reader, [])]
        if not header:
            raise SignalIOError(f"{path} has no header row")
        channel_names = list(schema) if schema else [c for c in header if c != ANOMALY_COLUMN]
        missing = [column for column in channel_names if column not in header]
        if missing:
            raise SignalIOError(f"{path} has no column(s) {', '.join(missing)}")
        columns = [header.index(column) for column in channel_names]
        anomaly_column = header.index(ANOMALY_COLUMN) if ANOMALY_COLUMN in header else None
        rows, labels, blanks = _read_rows(reader, len(header), columns, anomaly_column)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns)).T
    _check_ragged(values, blanks, channel_names)
    intervals = _runs_of_ones(np.array(labels, dtype=np.int8)) if labels else []
    series = RawSeries(
        name=name or path.stem,
        channel_names=tuple(channel_names),
        channels=values,
        sample_period=sample_period,
        anomaly_intervals=tuple(intervals),
    )
    logger.info(
        "Loaded series %s: %s channels, %s samples, %s anomalies",
        series.name,
        len(channel_names),
        series.length,
        len(series.anomaly_intervals),
    )
    return series


def _read_rows(
    reader: Iterable[List[str]],
    width: int,
    columns: Sequence[int],
    anomaly_column: Optional[int],
) -> Tuple[List[List[float]], List[int], List[List[int]]]:
    rows: List[List[float]] = []
    labels: List[int] = []
    blanks: List[List[int]] = []
    for fields in reader:
        line_number = reader.line_num  # type: ignore[attr-defined]
        if not fields:
            continue
        if len(fields) != width:
            raise CsvParseError(f"expected {width} fields, found {len(fields)}", line_number)
        row = []
        for position, column in enumerate(columns):
            field = fields[column].strip()
            if not field:
                blanks.append([position, len(rows)])
                row.append(np.nan)
                continue
            try:
                row.append(float(field))
            except ValueError:
                raise CsvParseError(f"`{field}` is not a number", line_number) from None
        if anomaly_column is not None:
            label = fields[anomaly_column].strip()
            if label not in ("0", "1"):
                raise CsvParseError(f"anomaly flag must be 0 or 1, found `{label}`", line_number)
            labels.append(int(label))
        rows.append(row)
    return rows, labels, blanks


def _check_ragged(values: np.ndarray, blanks: List[List[int]], names: Sequence[str]) -> None:
    if not blanks:
        return
    channel = blanks[0][0]
    present = int(np.count_nonzero(~np.isnan(values[channel])))
    raise SignalIOError(
        f"Ragged channels: `{names[channel]}` has {present} samples, expected {values.shape[1]}"
    )


def _runs_of_ones(flags: np.ndarray) -> List[Interval]:
    padded = np.concatenate(([0], flags.astype(np.int8), [0]))
    changes = np.flatnonzero(np.diff(padded))
    return [(int(start), int(end)) for start, end in zip(changes[::2], changes[1::2])]


def anomaly_flags(length: int, intervals: Sequence[Interval]) -> np.ndarray:
    """Return a 0/1 vector marking the samples covered by `intervals`."""
    flags = np.zeros(length, dtype=np.int8)
    for start, end in intervals:
        flags[start:end] = 1
    return flags


def write_csv(series: RawSeries, path: Path) -> None:
    """Write a series in the format `load_csv` reads, with an `anomaly` column."""
    flags = anomaly_flags(series.length, series.anomaly_intervals)
    rows = (
        [repr(float(value)) for value in series.channels[:, index]] + [int(flags[index])]
        for index in range(series.length)
    )
    write_atomic(Path(path), render_csv([*series.channel_names, ANOMALY_COLUMN], rows))
    logger.info("Wrote series %s to %s", series.name, path)


def convert_physical(series: RawSeries, gains: Sequence[ChannelConversion]) -> RawSeries:
    """Scale every channel by its conversion multiplier (G·LSB, DCCT factor, ...).

    Raises:
        SignalIOError: If the number of conversions differs from the channel count.
    """
    if len(gains) != len(series.channel_names):
        raise SignalIOError(
            f"{len(gains)} conversions given for {len(series.channel_names)} channels"
        )
    multipliers = np.array([conversion.value for conversion in gains], dtype=np.float64)
    return dataclasses.replace(series, channels=series.channels * multipliers[:, None])


def shared_bounds(series: Sequence[RawSeries]) -> Bounds:
    """Return per-channel `(min, max)` over all of the given series."""
    if not series:
        raise SignalIOError("At least one series is needed to compute bounds")
    stacked = np.concatenate([item.channels for item in series], axis=1)
    lows, highs = stacked.min(axis=1), stacked.max(axis=1)
    return tuple((float(lo), float(hi)) for lo, hi in zip(lows, highs))


def normalize(series: RawSeries, bounds: Optional[Bounds] = None) -> NormalizedSeries:
    """Map every channel to [0, 1] with `(x - min) / |max - min|`, clipping outliers.

    Args:
        series: Series to normalize.
        bounds: Per-channel `(min, max)`; computed from `series` when omitted.

    Raises:
        DegenerateRangeError: If a channel has an empty range.
    """
    if bounds is None:
        bounds = shared_bounds([series])
    if len(bounds) != len(series.channel_names):
        raise SignalIOError(f"{len(bounds)} bounds given for {len(series.channel_names)} channels")
    lows = np.array([lo for lo, _ in bounds], dtype=np.float64)
    highs = np.array([hi for _, hi in bounds], dtype=np.float64)
    spans = np.abs(highs - lows)
    for name, span in zip(series.channel_names, spans):
        if span == 0.0:
            raise DegenerateRangeError(f"Channel `{name}` has a degenerate range")
    scaled = (series.channels - lows[:, None]) / spans[:, None]
    return NormalizedSeries(
        name=series.name,
        channel_names=series.channel_names,
        channels=np.clip(scaled, 0.0, 1.0),
        sample_period=series.sample_period,
        anomaly_intervals=series.anomaly_intervals,
        norm_bounds=tuple(bounds),
    )


def denormalize(series: NormalizedSeries) -> np.ndarray:
    """Return the channels mapped back to the units of the stored bounds."""
    lows = np.array([lo for lo, _ in series.norm_bounds])
    highs = np.array([hi for _, hi in series.norm_bounds])
    return series.channels * np.abs(highs - lows)[:, None] + lows[:, None]


def _slice(series: NormalizedSeries, start: int, end: int, name: str) -> NormalizedSeries:
    intervals = tuple(
        (max(lo, start) - start, min(hi, end) - start)
        for lo, hi in series.anomaly_intervals
        if lo < end and hi > start
    )
    return dataclasses.replace(
        series, name=name, channels=series.channels[:, start:end], anomaly_intervals=intervals
    )


def split_series(
    series: NormalizedSeries, split_index: int
) -> Tuple[NormalizedSeries, NormalizedSeries]:
    """Split into an anomaly-free training part `[0, split)` and a test part.

    Raises:
        SignalIOError: If the split index is not strictly inside the series.
        InvalidSplitError: If an anomaly interval intersects the training part.
    """
    if not 0 < split_index < series.length:
        raise SignalIOError(f"Split index {split_index} must lie in (0, {series.length})")
    for start, end in series.anomaly_intervals:
        if start < split_index:
            raise InvalidSplitError(
                f"Anomaly [{start}, {end}) intersects the training part [0, {split_index})"
            )
    return (
        _slice(series, 0, split_index, f"{series.name}-train"),
        _slice(series, split_index, series.length, f"{series.name}-test"),
    )


def decimate(series: NormalizedSeries, factor: int) -> NormalizedSeries:
    """Keep every `factor`-th sample; intervals are rescaled by floor division.

    Intervals that collapse to zero length are dropped.
    """
    if factor < 1:
        raise SignalIOError(f"Decimation factor must be at least 1, got {factor}")
    if factor == 1:
        return series
    length = -(-series.length // factor)
    intervals = []
    for start, end in series.anomaly_intervals:
        lo, hi = start // factor, min(end // factor, length)
        if hi > lo:
            intervals.append((lo, hi))
        else:
            logger.debug("Interval [%s, %s) vanished under decimation by %s", start, end, factor)
    return dataclasses.replace(
        series, channels=series.channels[:, ::factor], anomaly_intervals=tuple(intervals)
    )


def window_count(length: int, cfg: PreprocessConfig) -> int:
    """Return how many examples a series of `length` samples yields."""
    return length - cfg.look_back - cfg.look_ahead + 1


def build_windows(
    series: NormalizedSeries,
    grids: Tuple[Sequence[QuantizationGrid], QuantizationGrid],
    cfg: PreprocessConfig,
) -> WindowedDataset:
    """Build quantized history windows and one-hot targets for every admissible sample.

    The example predicting sample `t` holds the classes of all channels over
    `[t - look_ahead - look_back + 1, t - look_ahead]`. Windows overlap.

    Args:
        series: Normalized series.
        grids: One input grid per channel and the output grid of the target channel.
        cfg: Preprocessing options.
    """
    in_grids, out_grid = grids
    count = window_count(series.length, cfg)
    if count < 1:
        raise SignalIOError(
            f"Series of {series.length} samples is too short for "
            f"look_back={cfg.look_back} and look_ahead={cfg.look_ahead}"
        )
    if len(in_grids) != len(series.channel_names):
        raise SignalIOError("One input grid is required per channel")
    if cfg.target_channel >= len(series.channel_names):
        raise SignalIOError(f"Target channel {cfg.target_channel} does not exist")
    if out_grid.m != cfg.out_grid or any(grid.m != cfg.in_grid for grid in in_grids):
        raise SignalIOError("Grid sizes do not match in_grid/out_grid")
    classes = np.stack(
        [quantize_array(grid, channel) for grid, channel in zip(in_grids, series.channels)]
    ).astype(np.int32)
    # (channels, starts, look_back) -> (starts, look_back, channels)
    inputs = sliding_window_view(classes, cfg.look_back, axis=1)[:, :count, :].transpose(1, 2, 0)
    first_target = cfg.look_back + cfg.look_ahead - 1
    target_classes = quantize_array(out_grid, series.channels[cfg.target_channel, first_target:])
    targets = np.zeros((count, cfg.out_grid), dtype=np.float64)
    targets[np.arange(count), target_classes] = 1.0
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        config=cfg,
        target_index=np.arange(first_target, series.length),
    )


def mix(datasets: Sequence[WindowedDataset]) -> WindowedDataset:
    """Concatenate examples of several series into one dataset."""
    if not datasets:
        raise SignalIOError("Nothing to mix")
    if len(datasets) == 1:
        return datasets[0]
    return WindowedDataset(
        inputs=np.concatenate([item.inputs for item in datasets]),
        targets=np.concatenate([item.targets for item in datasets]),
        config=datasets[0].config,
        target_index=np.concatenate([item.target_index for item in datasets]),
    )


def subsample(dataset: WindowedDataset, fraction: float, seed: int) -> WindowedDataset:
    """Return `round(fraction * N)` examples drawn without replacement.

    The selection is a seeded permutation prefix, so `fraction=1.0` yields a
    permutation of the full set and identical seeds yield identical subsets.
    """
    if not 0.0 < fraction <= 1.0:
        raise SignalIOError(f"samples_percentage must lie in (0, 1], got {fraction}")
    size = int(np.floor(fraction * len(dataset) + 0.5))
    selection = np.random.default_rng(seed).permutation(len(dataset))[:size]
    return WindowedDataset(
        inputs=dataset.inputs[selection],
        targets=dataset.targets[selection],
        config=dataset.config,
        target_index=dataset.target_index[selection],
    )
