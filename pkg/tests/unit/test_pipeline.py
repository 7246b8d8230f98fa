#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

import dataclasses

import numpy as np
import pytest

from analyzer import AnomalyCandidate, DetectionRun, RuleSet, apply_rules
from artifacts import (
    CANDIDATES_FILE_NAME,
    MODEL_BUNDLE_FILE_NAME,
    RULES_FILE_NAME,
    SETUP_SUMMARY_FILE_NAME,
    SWEEP_TABLE_FILE_NAME,
    THRESHOLDS_REPORT_FILE_NAME,
    TRAIN_REPORT_FILE_NAME,
)
from detector_config import (
    DetectorConfig,
    Optimizer,
    PreprocessConfig,
    SelectionCriterion,
    SweepGrid,
)
from gru_model import ConfigMismatchError, TrainReport
from pipeline import (
    DetectorData,
    PipelineError,
    Trace,
    build_grids,
    candidate_config,
    criterion_value,
    design_detector,
    meets_requirements,
    normalize_data,
    raise_for_false_positives,
    rank_setups,
    run_setup,
    sweep,
    sweep_points,
    training_dataset,
    with_rules,
)
from synth import build_corpus
from tests.unit.fixtures import SMALL_SYNTH, SeriesFixtures, make_normalized, make_series

SMALL_SECTIONS = {
    "preprocess": {
        "look_back": "4",
        "in_grid": "4",
        "out_grid": "4",
        "in_algorithm": "static",
        "out_algorithm": "static",
        "samples_percentage": "0.5",
    },
    "model": {"cells": "4"},
    "training": {"epochs": "2", "batch_size": "64", "learning_rate": "0.05"},
}


def small_config(**overrides) -> DetectorConfig:
    sections = {name: dict(values) for name, values in SMALL_SECTIONS.items()}
    for name, values in overrides.items():
        sections.setdefault(name, {}).update(values)
    return DetectorConfig.from_sections(sections)


def small_data() -> DetectorData:
    train, test = build_corpus(SMALL_SYNTH)
    return DetectorData(train=(train,), tests={"test": test})


def candidate(start: int, length: int, cum_amp: float) -> AnomalyCandidate:
    return AnomalyCandidate(start=start, amplitudes=np.full(length, cum_amp / length))


def report_with_accuracy(value: float) -> TrainReport:
    return TrainReport(
        train_loss=[1.0],
        train_accuracy=[value],
        validation_accuracy=[value],
        epochs_run=1,
        seed=0,
        optimizer=Optimizer.sgd,
        learning_rate=0.1,
        validation_size=1,
    )


class TestDetectorData:
    def test_given_no_training_series_when_detector_data_is_created_then_pipeline_error_is_raised(  # noqa: E501
        self,
    ):
        with pytest.raises(PipelineError):
            DetectorData(train=())

    def test_given_test_with_other_channels_when_detector_data_is_created_then_pipeline_error_is_raised(  # noqa: E501
        self,
    ):
        train = make_series([0.0, 1.0], [1.0, 2.0])
        test = make_series([0.0, 1.0])

        with pytest.raises(PipelineError):
            DetectorData(train=(train,), tests={"test": test})


class TestPreprocessing:
    def test_given_default_options_when_normalize_data_then_bounds_cover_train_and_tests(self):
        data = DetectorData(
            train=(make_series([0.0, 1.0, 0.5]),), tests={"test": make_series([-1.0, 3.0])}
        )

        bounds, train, tests = normalize_data(data, PreprocessConfig())

        assert bounds == ((-1.0, 3.0),)
        np.testing.assert_allclose(train[0].channels[0], [0.25, 0.5, 0.375])
        np.testing.assert_allclose(tests["test"].channels[0], [0.0, 1.0])

    def test_given_train_only_bounds_when_normalize_data_then_bounds_come_from_training(self):
        data = DetectorData(
            train=(make_series([0.0, 1.0, 0.5]),), tests={"test": make_series([-1.0, 3.0])}
        )

        bounds, _, _ = normalize_data(data, PreprocessConfig(train_only_bounds=True))

        assert bounds == ((0.0, 1.0),)

    def test_given_two_channels_when_build_grids_then_one_input_grid_per_channel(self):
        series = make_normalized(np.linspace(0, 1, 50), np.linspace(1, 0, 50))

        in_grids, out_grid = build_grids([series], PreprocessConfig(in_grid=8, out_grid=4))

        assert [grid.m for grid in in_grids] == [8, 8]
        assert out_grid.m == 4

    @pytest.mark.parametrize(
        "preprocess",
        [
            pytest.param(PreprocessConfig(in_algorithm="none"), id="no-grid"),
            pytest.param(PreprocessConfig(target_channel=1), id="missing-target"),
        ],
    )
    def test_given_unusable_options_when_build_grids_then_pipeline_error_is_raised(
        self, preprocess
    ):
        with pytest.raises(PipelineError):
            build_grids([make_normalized(np.linspace(0, 1, 50))], preprocess)

    def test_given_decimation_and_sampling_when_training_dataset_then_examples_are_reduced(self):
        preprocess = small_config(
            preprocess={"decimation": "2", "samples_percentage": "0.5"}
        ).preprocess
        series = make_normalized(np.linspace(0, 1, 100))
        grids = build_grids([series], preprocess)

        dataset = training_dataset([series], grids, preprocess)

        assert len(dataset) == 23


class TestRunSetup(SeriesFixtures):
    def test_given_synthetic_corpus_when_run_setup_then_rules_silence_every_training_candidate(
        self,
    ):
        setup = run_setup(small_data(), small_config())

        assert apply_rules(setup.train_candidates, setup.rules).anomalies == ()
        assert set(setup.reports) == {"test"}
        assert setup.reports["test"].truth == list(build_corpus(SMALL_SYNTH)[1].anomaly_intervals)
        assert setup.bundle.channel_names == ("v0", "v1", "i")
        assert 0.0 <= setup.train_accuracy <= 1.0
        assert setup.train_report.epochs_run == 2

    def test_given_training_series_with_anomalies_when_run_setup_then_pipeline_error_is_raised(
        self,
    ):
        _, test = build_corpus(SMALL_SYNTH)

        with pytest.raises(PipelineError):
            run_setup(DetectorData(train=(test,)), small_config())

    def test_given_out_dir_when_run_setup_then_every_artifact_is_written(self):
        run_setup(small_data(), small_config(), out_dir=self.tmp_path)

        for name in (
            MODEL_BUNDLE_FILE_NAME,
            RULES_FILE_NAME,
            TRAIN_REPORT_FILE_NAME,
            THRESHOLDS_REPORT_FILE_NAME,
            CANDIDATES_FILE_NAME,
            SETUP_SUMMARY_FILE_NAME,
            "detection_test.json",
            "metrics_test.csv",
            "trace_test.csv",
        ):
            assert (self.tmp_path / name).is_file(), name

    def test_given_same_config_when_run_setup_twice_then_artifacts_are_byte_identical(self):
        run_setup(small_data(), small_config(), out_dir=self.tmp_path / "first")
        run_setup(small_data(), small_config(), out_dir=self.tmp_path / "second")

        for name in (MODEL_BUNDLE_FILE_NAME, RULES_FILE_NAME, "metrics_test.csv"):
            first = (self.tmp_path / "first" / name).read_bytes()
            assert first == (self.tmp_path / "second" / name).read_bytes(), name

    def test_given_trained_bundle_when_run_setup_with_init_from_then_grids_and_bounds_are_reused(
        self,
    ):
        first = run_setup(small_data(), small_config())

        second = run_setup(small_data(), small_config(), init_from=first.bundle)

        assert second.bundle.in_grids == first.bundle.in_grids
        assert second.bundle.norm_bounds == first.bundle.norm_bounds
        assert second.bundle.model is not first.bundle.model

    def test_given_bundle_with_other_shape_when_run_setup_with_init_from_then_mismatch_is_reported(  # noqa: E501
        self,
    ):
        first = run_setup(small_data(), small_config())
        other = small_config(model={"cells": "8"}, preprocess={"look_back": "6"})

        with pytest.raises(ConfigMismatchError) as exc_info:
            run_setup(small_data(), other, init_from=first.bundle)

        assert exc_info.value.keys == ["look_back", "cells"]


class TestOversensitivity:
    def test_given_no_false_positive_when_raise_for_false_positives_then_rules_are_kept(self):
        rules = RuleSet.from_thresholds({"length": 3.0})

        outcome = raise_for_false_positives(rules, [candidate(0, 20, 0.5)], [])

        assert outcome.rules == rules
        assert not outcome.escalate

    def test_given_no_true_positive_when_raise_for_false_positives_then_escalation_is_asked(self):
        outcome = raise_for_false_positives(
            RuleSet.from_thresholds({}), [], [candidate(0, 3, 1.0)]
        )

        assert outcome.escalate
        assert outcome.false_positives == 1

    @pytest.mark.parametrize(
        "bins,expected",
        [
            pytest.param({"length": np.arange(0.0, 30.0, 2.0)}, 6.0, id="next-bin-boundary"),
            pytest.param(None, 5.0, id="largest-false-value"),
        ],
    )
    def test_given_separating_length_when_raise_for_false_positives_then_length_threshold_is_raised(  # noqa: E501
        self, bins, expected
    ):
        true_positives = [candidate(0, 20, 0.5), candidate(100, 25, 3.0)]
        false_positives = [candidate(200, 3, 1.0), candidate(300, 5, 0.2)]
        rules = RuleSet.from_thresholds({"length": 2.0, "cum_amp": 0.0, "max_amp": 0.0})

        outcome = raise_for_false_positives(rules, true_positives, false_positives, bins)

        assert outcome.raised == "length"
        assert outcome.rules.thresholds["length"] == expected
        assert apply_rules(false_positives, outcome.rules).anomalies == ()
        assert len(apply_rules(true_positives, outcome.rules).anomalies) == 2

    def test_given_higher_current_threshold_when_raise_for_false_positives_then_threshold_never_drops(  # noqa: E501
        self,
    ):
        rules = RuleSet.from_thresholds({"length": 8.0})

        outcome = raise_for_false_positives(
            rules, [candidate(0, 20, 0.5)], [candidate(50, 3, 1.0)], properties=("length",)
        )

        assert outcome.rules.thresholds["length"] == 8.0

    def test_given_overlapping_properties_when_raise_for_false_positives_then_escalation_is_asked(  # noqa: E501
        self,
    ):
        true_positives = [candidate(0, 4, 0.4)]
        false_positives = [candidate(50, 6, 1.2)]

        outcome = raise_for_false_positives(
            RuleSet.from_thresholds({}), true_positives, false_positives
        )

        assert outcome.escalate
        assert outcome.raised is None


class TestRanking:
    @pytest.fixture(autouse=True)
    def setups(self):
        base = run_setup(small_data(), small_config())
        profiles = [
            ([candidate(0, 10, 2.0), candidate(20, 4, 2.0)], 0.9),
            ([candidate(0, 5, 3.0)], 0.8),
            ([candidate(0, 7, 1.0), candidate(20, 7, 2.8)], 0.95),
        ]
        self.base = base
        self.setups = [
            dataclasses.replace(
                base, train_candidates=tuple(found), train_report=report_with_accuracy(acc)
            )
            for found, acc in profiles
        ]

    @pytest.mark.parametrize(
        "criterion,expected",
        [
            pytest.param(SelectionCriterion.best_length, [1, 2, 0], id="best-length"),
            pytest.param(SelectionCriterion.best_cum_amp, [0, 2, 1], id="best-cum-amp"),
            pytest.param(SelectionCriterion.best_accuracy, [2, 0, 1], id="best-accuracy"),
            pytest.param(SelectionCriterion.balanced, [2, 0, 1], id="balanced"),
        ],
    )
    def test_given_setups_when_rank_setups_then_order_follows_criterion(
        self, criterion, expected
    ):
        ranked = rank_setups(self.setups, criterion)

        assert [self.setups.index(setup) for setup in ranked] == expected

    def test_given_equal_setups_when_rank_setups_then_earlier_setup_wins(self):
        twins = [self.setups[0], dataclasses.replace(self.setups[0])]

        ranked = rank_setups(twins, SelectionCriterion.best_length)

        assert ranked[0] is twins[0]

    def test_given_balanced_criterion_when_criterion_value_then_pipeline_error_is_raised(self):
        with pytest.raises(PipelineError):
            criterion_value(self.setups[0], SelectionCriterion.balanced)

    def test_given_false_maxima_when_criterion_value_then_maximum_of_property_is_returned(self):
        assert criterion_value(self.setups[0], SelectionCriterion.best_length) == 10.0
        assert criterion_value(self.setups[0], SelectionCriterion.best_max_amp) == pytest.approx(
            0.5
        )

    def test_given_unreachable_requirements_when_meets_requirements_then_false_is_returned(self):
        strict = small_config(pipeline={"min_f1": "1.0", "min_f2": "1.0"})
        relaxed = small_config()

        assert meets_requirements(self.base, relaxed)
        if self.base.reports["test"].f1 < 1.0:
            assert not meets_requirements(self.base, strict)

    def test_given_very_strict_rules_when_with_rules_then_nothing_is_detected(self):
        rules = RuleSet.from_thresholds({"length": 1e9})

        strict = with_rules(self.base, rules)

        assert strict.runs["test"].anomalies == ()
        assert strict.reports["test"].tp == 0
        assert strict.reports["test"].fn == len(strict.reports["test"].truth)


class TestSweep(SeriesFixtures):
    def test_given_sweep_grid_when_sweep_points_then_cartesian_product_in_grid_order(self):
        points = sweep_points(SweepGrid(look_back=[2, 4], cells=[4, 8]))

        assert points == [
            {"look_back": 2, "cells": 4},
            {"look_back": 2, "cells": 8},
            {"look_back": 4, "cells": 4},
            {"look_back": 4, "cells": 8},
        ]

    def test_given_empty_grid_when_sweep_points_then_pipeline_error_is_raised(self):
        with pytest.raises(PipelineError):
            sweep_points(SweepGrid())

    def test_given_point_when_candidate_config_then_each_section_is_overridden(self):
        config = candidate_config(
            small_config(), {"look_back": 6, "cells": 8, "learning_rate": 0.2}
        )

        assert config.preprocess.look_back == 6
        assert config.preprocess.in_grid == 4
        assert config.model.cells == 8
        assert config.training.learning_rate == 0.2

    def test_given_invalid_point_when_candidate_config_then_pipeline_error_is_raised(self):
        with pytest.raises(PipelineError):
            candidate_config(small_config(), {"look_back": 0})

    def test_given_two_points_when_sweep_then_ranked_setups_and_table_are_written(self):
        config = small_config(sweep={"cells": "2, 4"})

        ranked = sweep(small_data(), config, out_dir=self.tmp_path)

        assert sorted(setup.params["cells"] for setup in ranked) == [2, 4]
        assert (self.tmp_path / "candidate_000" / MODEL_BUNDLE_FILE_NAME).is_file()
        assert (self.tmp_path / "candidate_001" / MODEL_BUNDLE_FILE_NAME).is_file()
        lines = (self.tmp_path / SWEEP_TABLE_FILE_NAME).read_text().splitlines()
        assert lines[0].startswith("rank,candidate,cells,parameters")
        assert len(lines) == 3

    def test_given_reachable_requirements_when_design_detector_then_initial_setup_is_kept(self):
        outcome = design_detector(small_data(), small_config(), out_dir=self.tmp_path)

        assert outcome.satisfied
        assert [step.action for step in outcome.steps] == ["initial setup"]
        assert (self.tmp_path / MODEL_BUNDLE_FILE_NAME).is_file()

    def test_given_unreachable_requirements_when_design_detector_then_iterations_are_bounded(
        self,
    ):
        config = small_config(pipeline={"min_f1": "1.0", "min_f2": "1.0", "max_iterations": "2"})

        outcome = design_detector(small_data(), config)

        assert outcome.steps[0].action == "initial setup"
        assert len(outcome.steps) <= 3


class TestTrace:
    def test_given_detection_run_when_trace_rows_then_samples_inside_anomalies_are_flagged(self):
        trace = Trace(
            target_index=np.arange(4, 9),
            real=np.array([0, 1, 2, 3, 0]),
            predicted=np.array([0, 3, 3, 3, 0]),
        )
        found = AnomalyCandidate(start=5, amplitudes=np.ones(2))
        run = DetectionRun(candidates=(found,), anomalies=(found,))

        rows = trace.rows(run)

        assert rows == [(4, 0, 0, 0), (5, 1, 3, 1), (6, 2, 3, 1), (7, 3, 3, 0), (8, 0, 0, 0)]
