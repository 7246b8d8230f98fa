#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

import dataclasses

import numpy as np
import pytest

from detector_config import SynthConfig
from signal_io import anomaly_flags
from synth import (
    StepPlan,
    SynthError,
    build_corpus,
    current_profile,
    generate_normal,
    inject_steps,
    preset,
)
from tests.unit.fixtures import SMALL_SYNTH


class TestGenerateNormal:
    def test_given_periodic_only_config_when_generate_normal_then_output_repeats_exactly(self):
        config = SynthConfig(
            ramp_fast_samples=0, ramp_slow_samples=0, ramp_down_samples=0, periodic_period=7
        )

        series = generate_normal(config, 70)

        assert np.array_equal(series.channels[:, :-7], series.channels[:, 7:])
        assert series.channel_names == ("v0", "v1", "i")
        assert series.anomaly_intervals == ()

    def test_given_same_seed_when_generate_normal_twice_then_series_are_identical(self):
        config = SMALL_SYNTH.model_copy(update={"noise": 0.01})

        first, second = generate_normal(config, 500), generate_normal(config, 500)

        assert np.array_equal(first.channels, second.channels)

    def test_given_other_seed_when_generate_normal_then_noise_differs(self):
        config = SMALL_SYNTH.model_copy(update={"noise": 0.01})

        first = generate_normal(config, 500)
        second = generate_normal(config.model_copy(update={"seed": 12}), 500)

        assert not np.array_equal(first.channels, second.channels)

    def test_given_ramp_with_changeover_when_current_profile_then_slopes_differ_five_fold(self):
        config = SynthConfig()
        fast = config.ramp_fast_samples
        t = np.arange(fast - 1, fast + 2)

        current, slope = current_profile(config, t)

        assert slope[0] / slope[2] == pytest.approx(5.0)
        assert (current[1] - current[0]) / (current[2] - current[1]) == pytest.approx(5.0)

    def test_given_full_cycle_when_current_profile_then_current_returns_to_zero(self):
        config = SynthConfig()
        cycle = config.ramp_fast_samples + config.ramp_slow_samples + config.ramp_down_samples

        current, slope = current_profile(config, np.array([0, cycle, 2 * cycle]))

        np.testing.assert_allclose(current, 0.0, atol=1e-9)
        assert np.all(slope == config.ramp_rate_fast)

    def test_given_inductive_coupling_when_generate_normal_then_voltage_follows_current_slope(
        self,
    ):
        config = SynthConfig(periodic_amplitude=0.0)

        series = generate_normal(config, 600)

        _, slope = current_profile(config, np.arange(600))
        np.testing.assert_allclose(series.channels[0], 0.004 * slope)
        np.testing.assert_allclose(series.channels[1], -0.004 * slope)

    def test_given_non_positive_length_when_generate_normal_then_synth_error_is_raised(self):
        with pytest.raises(SynthError):
            generate_normal(SMALL_SYNTH, 0)


class TestInjectSteps:
    @pytest.fixture(autouse=True)
    def normal_series(self):
        self.series = generate_normal(SMALL_SYNTH, 120_000)

    def test_given_thousand_steps_when_inject_steps_then_intervals_match_plan(self):
        plan = StepPlan(count=1000, duration=100, height=0.3, min_gap=10, seed=3)

        injected = inject_steps(self.series, plan)

        intervals = injected.anomaly_intervals
        assert len(intervals) == 1000
        assert all(end - start == 100 for start, end in intervals)
        assert all(b[0] - a[1] >= 10 for a, b in zip(intervals, intervals[1:]))

    def test_given_injected_steps_when_compared_with_input_then_only_step_samples_change(self):
        plan = StepPlan(count=20, duration=50, height=0.3, min_gap=100, seed=1)

        injected = inject_steps(self.series, plan)

        inside = anomaly_flags(self.series.length, injected.anomaly_intervals).astype(bool)
        target = self.series.channels[0]
        height = 0.3 * (target.max() - target.min())
        np.testing.assert_array_equal(injected.channels[0][~inside], target[~inside])
        np.testing.assert_allclose(injected.channels[0][inside] - target[inside], height)
        np.testing.assert_array_equal(injected.channels[1:], self.series.channels[1:])

    def test_given_empty_plan_when_inject_steps_then_series_is_returned_unchanged(self):
        empty = StepPlan(count=0, duration=100, height=0.3)

        assert inject_steps(self.series, empty) is self.series

    def test_given_same_seed_when_inject_steps_twice_then_placements_are_identical(self):
        plan = StepPlan(count=10, duration=50, height=0.3, seed=9)

        assert (
            inject_steps(self.series, plan).anomaly_intervals
            == inject_steps(self.series, plan).anomaly_intervals
        )

    def test_given_plan_larger_than_series_when_inject_steps_then_synth_error_is_raised(self):
        plan = StepPlan(count=2000, duration=100, height=0.3)

        with pytest.raises(SynthError):
            inject_steps(self.series, plan)

    def test_given_missing_target_channel_when_inject_steps_then_synth_error_is_raised(self):
        plan = StepPlan(count=1, duration=10, height=0.3, target_channel=3)

        with pytest.raises(SynthError):
            inject_steps(self.series, plan)

    def test_given_series_with_anomalies_when_steps_overlap_them_then_synth_error_is_raised(self):
        flagged = dataclasses.replace(
            self.series, anomaly_intervals=((0, self.series.length),)
        )

        with pytest.raises(SynthError):
            inject_steps(flagged, StepPlan(count=1, duration=10, height=0.3))


class TestCorpus:
    @pytest.mark.parametrize(
        "name,duration",
        [pytest.param("set1", 100, id="set1"), pytest.param("set2", 50, id="set2")],
    )
    def test_given_preset_name_when_preset_then_step_duration_is_replaced(self, name, duration):
        config = preset(SMALL_SYNTH, name)

        assert config.step_duration == duration
        assert config.name == f"small-{name}"

    def test_given_unknown_preset_when_preset_then_synth_error_is_raised(self):
        with pytest.raises(SynthError):
            preset(SMALL_SYNTH, "set3")

    def test_given_config_when_build_corpus_then_train_is_normal_and_test_holds_steps(self):
        train, test = build_corpus(SMALL_SYNTH)

        assert train.length == 3_000
        assert test.length == 2_000
        assert train.anomaly_intervals == ()
        assert len(test.anomaly_intervals) == 4
        assert all(end - start == 20 for start, end in test.anomaly_intervals)
        assert test.anomaly_intervals[0][0] >= SMALL_SYNTH.min_gap

    def test_given_config_when_build_corpus_then_test_continues_training_timeline(self):
        _, test = build_corpus(SMALL_SYNTH)
        whole = generate_normal(SMALL_SYNTH, 5_000)

        normal = anomaly_flags(test.length, test.anomaly_intervals) == 0
        np.testing.assert_array_equal(
            test.channels[:, normal], whole.channels[:, 3_000:][:, normal]
        )
