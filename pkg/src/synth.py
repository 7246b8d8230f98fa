#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Magnet-like synthetic series with injected step anomalies.

The current channel follows a repeating powering cycle: a fast ramp, a slower
ramp after the changeover, and a linear ramp down. Every voltage channel is an
inductive response to the current slope plus a shared periodic component and
optional Gaussian noise. Step anomalies add a constant offset to the target
channel over fixed-length windows.
"""

import dataclasses
import logging
from typing import Optional, Tuple

import numpy as np

from detector_config import SynthConfig
from signal_io import RawSeries

logger = logging.getLogger(__name__)

NOISE_STREAM = 0
PLACEMENT_STREAM = 1

STEP_DURATION_PRESETS = {
    "set1": 100,
    "set2": 50,
}


class SynthError(Exception):
    """Raised when a synthetic series or anomaly plan cannot be produced."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


@dataclasses.dataclass(frozen=True)
class StepPlan:
    """Where and how large the injected steps are.

    Attributes:
        count: Number of steps.
        duration: Samples per step.
        height: Step height as a fraction of the target channel range.
        min_gap: Minimum number of samples between two steps.
        target_channel: Channel receiving the steps.
        seed: Placement seed.
        start: First sample index a step may cover.
    """

    count: int
    duration: int
    height: float
    min_gap: int = 0
    target_channel: int = 0
    seed: int = 0
    start: int = 0

    @classmethod
    def from_config(cls, config: SynthConfig, start: int = 0) -> "StepPlan":
        """Build the plan described by a `[synth]` section."""
        return cls(
            count=config.anomaly_count,
            duration=config.step_duration,
            height=config.step_height,
            min_gap=config.min_gap,
            target_channel=config.target_channel,
            seed=config.seed,
            start=start,
        )


def preset(config: SynthConfig, name: str) -> SynthConfig:
    """Return the config with the step duration of a named set (`set1`, `set2`)."""
    if name not in STEP_DURATION_PRESETS:
        raise SynthError(f"Unknown preset `{name}`; known: {', '.join(STEP_DURATION_PRESETS)}")
    return config.model_copy(
        update={"step_duration": STEP_DURATION_PRESETS[name], "name": f"{config.name}-{name}"}
    )


def current_profile(config: SynthConfig, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return the current and its slope (A/s) at sample indices `t`."""
    dt = config.sample_period
    fast, slow, down = (
        config.ramp_fast_samples,
        config.ramp_slow_samples,
        config.ramp_down_samples,
    )
    cycle = fast + slow + down
    if cycle == 0:
        return np.zeros(t.shape), np.zeros(t.shape)
    phase = t % cycle
    changeover = config.ramp_rate_fast * fast * dt
    peak = changeover + config.ramp_rate_slow * slow * dt
    in_fast = phase < fast
    in_slow = ~in_fast & (phase < fast + slow)
    down_rate = -peak / (max(down, 1) * dt)
    rates = [config.ramp_rate_fast, config.ramp_rate_slow]
    slope = np.select([in_fast, in_slow], rates, down_rate)
    current = np.select(
        [in_fast, in_slow],
        [
            config.ramp_rate_fast * dt * phase,
            changeover + config.ramp_rate_slow * dt * (phase - fast),
        ],
        peak + down_rate * dt * (phase - fast - slow),
    )
    return current, slope


def generate_normal(
    config: SynthConfig, length: Optional[int] = None, start: int = 0
) -> RawSeries:
    """Generate anomaly-free data, deterministic under the config seed.

    Args:
        config: Generator options.
        length: Number of samples; defaults to `train_length`.
        start: Index of the first sample within the powering cycle timeline.
    """
    length = config.train_length if length is None else length
    if length < 1:
        raise SynthError(f"Length must be positive, got {length}")
    t = np.arange(start, start + length)
    current, slope = current_profile(config, t)
    phase = (t % config.periodic_period) / config.periodic_period
    periodic = config.periodic_amplitude * np.sin(2.0 * np.pi * phase)
    rng = np.random.default_rng([config.seed, NOISE_STREAM])
    voltages = []
    for inductance in config.inductance:
        voltage = inductance * slope + periodic
        if config.noise > 0.0:
            voltage = voltage + rng.normal(0.0, config.noise, size=length)
        voltages.append(voltage)
    series = RawSeries(
        name=config.name,
        channel_names=config.channel_names,
        channels=np.vstack([*voltages, current]),
        sample_period=config.sample_period,
    )
    logger.info("Generated %s normal samples of %s", length, config.name)
    return series


def _placements(plan: StepPlan, length: int) -> np.ndarray:
    if plan.count == 0:
        return np.zeros(0, dtype=np.int64)
    required = plan.count * plan.duration + (plan.count - 1) * plan.min_gap
    free = length - plan.start - required
    if plan.start < 0 or free < 0:
        raise SynthError(
            f"Cannot place {plan.count} steps of {plan.duration} samples with gap "
            f"{plan.min_gap} in {length - plan.start} samples"
        )
    rng = np.random.default_rng([plan.seed, PLACEMENT_STREAM])
    # stars and bars: sorted slack offsets keep every gap >= min_gap
    slack = np.sort(rng.integers(0, free + 1, size=plan.count))
    return plan.start + slack + np.arange(plan.count) * (plan.duration + plan.min_gap)


def inject_steps(series: RawSeries, plan: StepPlan) -> RawSeries:
    """Add steps to the target channel and record them as anomaly intervals.

    Raises:
        SynthError: If the plan cannot be placed or the series already holds anomalies
            that would overlap a step.
    """
    if plan.target_channel >= len(series.channel_names):
        raise SynthError(f"Target channel {plan.target_channel} does not exist")
    starts = _placements(plan, series.length)
    if starts.size == 0:
        return series
    target = series.channels[plan.target_channel]
    height = plan.height * float(target.max() - target.min())
    channels = series.channels.copy()
    new_intervals = [(int(start), int(start) + plan.duration) for start in starts]
    for start, end in new_intervals:
        channels[plan.target_channel, start:end] += height
    intervals = sorted([*series.anomaly_intervals, *new_intervals])
    for (_, previous_end), (next_start, _) in zip(intervals, intervals[1:]):
        if next_start < previous_end:
            raise SynthError("Injected steps overlap existing anomalies")
    logger.info(
        "Injected %s steps of %s samples (height %.4g) into %s",
        starts.size,
        plan.duration,
        height,
        series.name,
    )
    return dataclasses.replace(series, channels=channels, anomaly_intervals=tuple(intervals))


def build_corpus(config: SynthConfig) -> Tuple[RawSeries, RawSeries]:
    """Return a normal training series and a test series with injected steps.

    The test part continues the training timeline. Steps start no earlier than
    `min_gap` samples into the test part.
    """
    series = generate_normal(config, config.train_length + config.test_length)
    split = config.train_length
    train = dataclasses.replace(
        series, name=f"{config.name}-train", channels=series.channels[:, :split]
    )
    test = dataclasses.replace(
        series, name=f"{config.name}-test", channels=series.channels[:, split:]
    )
    return train, inject_steps(test, StepPlan.from_config(config, start=config.min_gap))
