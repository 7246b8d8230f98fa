#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

import numpy as np
import pytest

from quantizer import (
    GridKind,
    GridRecord,
    QuantizationGrid,
    QuantizerError,
    bin_midpoint,
    build_adaptive_grid,
    build_grid,
    build_static_grid,
    diagnostics,
    from_record,
    midpoints,
    quantize,
    quantize_array,
    to_record,
)

SORTED_SAMPLES = [0.05, 0.1, 0.2, 0.4, 0.5, 0.7, 0.8, 0.9]


class TestBuildGrid:
    def test_given_m_4_when_build_static_grid_then_edges_are_evenly_spaced(self):
        grid = build_static_grid(4)

        assert grid.kind == GridKind.static
        np.testing.assert_allclose(grid.edges, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_given_m_8_when_static_diagnostics_then_median_width_is_one_eighth(self):
        grid = build_static_grid(8)

        assert diagnostics(grid, [0.5]).median_width == pytest.approx(0.125)

    @pytest.mark.parametrize(
        "build",
        [
            pytest.param(lambda: build_static_grid(1), id="static"),
            pytest.param(lambda: build_adaptive_grid([0.1, 0.2], 1), id="adaptive"),
        ],
    )
    def test_given_single_class_when_build_grid_then_quantizer_error_is_raised(self, build):
        with pytest.raises(QuantizerError):
            build()

    def test_given_eight_sorted_samples_when_build_adaptive_grid_then_edges_are_order_statistics(  # noqa: E501
        self,
    ):
        grid = build_adaptive_grid(SORTED_SAMPLES, 4)

        assert grid.kind == GridKind.adaptive
        np.testing.assert_allclose(grid.edges, [0.0, 0.2, 0.5, 0.8, 1.0])

    def test_given_unsorted_samples_when_build_adaptive_grid_then_samples_are_sorted_first(self):
        shuffled = np.random.default_rng(3).permutation(SORTED_SAMPLES)

        grid = build_adaptive_grid(shuffled, 4)

        np.testing.assert_allclose(grid.edges, [0.0, 0.2, 0.5, 0.8, 1.0])

    def test_given_identical_samples_when_build_adaptive_grid_then_interior_bins_are_empty(self):
        grid = build_adaptive_grid([0.5] * 10, 4)

        np.testing.assert_allclose(grid.edges, [0.0, 0.5, 0.5, 0.5, 1.0])
        assert quantize(grid, 0.5) == 3
        assert quantize(grid, 0.2) == 0

    def test_given_empty_samples_when_build_adaptive_grid_then_quantizer_error_is_raised(self):
        with pytest.raises(QuantizerError):
            build_adaptive_grid([], 4)

    def test_given_more_classes_than_samples_when_build_adaptive_grid_then_indices_are_clamped(
        self,
    ):
        grid = build_adaptive_grid([0.1, 0.6, 0.9], 4)

        np.testing.assert_allclose(grid.edges, [0.0, 0.6, 0.9, 0.9, 1.0])

    def test_given_equally_spaced_samples_when_build_adaptive_grid_then_static_grid_is_recovered(
        self,
    ):
        n = 1000

        adaptive = build_adaptive_grid(np.arange(n) / n, 8)

        np.testing.assert_allclose(adaptive.edges, build_static_grid(8).edges, atol=1.0 / n)

    def test_given_none_algorithm_when_build_grid_then_quantizer_error_is_raised(self):
        with pytest.raises(QuantizerError):
            build_grid("none", 8)

    def test_given_adaptive_without_samples_when_build_grid_then_quantizer_error_is_raised(self):
        with pytest.raises(QuantizerError):
            build_grid(GridKind.adaptive, 8)

    @pytest.mark.parametrize(
        "m,edges",
        [
            pytest.param(2, [0.1, 0.5, 1.0], id="not-starting-at-zero"),
            pytest.param(3, [0.0, 0.6, 0.5, 1.0], id="decreasing"),
            pytest.param(3, [0.0, 1.0], id="wrong-count"),
        ],
    )
    def test_given_invalid_edges_when_grid_is_created_then_quantizer_error_is_raised(
        self, m, edges
    ):
        with pytest.raises(QuantizerError):
            QuantizationGrid(kind=GridKind.adaptive, m=m, edges=np.array(edges))

    def test_given_grid_when_edges_are_modified_then_grid_is_unchanged(self):
        grid = build_static_grid(4)

        with pytest.raises(ValueError):
            grid.edges[1] = 0.3


class TestQuantize:
    @pytest.mark.parametrize(
        "x,expected",
        [
            pytest.param(0.0, 0, id="lower-bound"),
            pytest.param(0.5, 4, id="middle"),
            pytest.param(0.124, 0, id="inside-first-bin"),
            pytest.param(0.125, 1, id="on-edge"),
            pytest.param(1.0, 7, id="upper-bound"),
        ],
    )
    def test_given_static_grid_when_quantize_then_class_is_floor_of_scaled_value(
        self, x, expected
    ):
        assert quantize(build_static_grid(8), x) == expected

    @pytest.mark.parametrize(
        "x,expected",
        [
            pytest.param(0.0, 0, id="lower-bound"),
            pytest.param(0.49, 1, id="inside"),
            pytest.param(0.5, 2, id="on-edge"),
            pytest.param(1.0, 3, id="upper-bound"),
        ],
    )
    def test_given_adaptive_grid_when_quantize_then_class_interval_contains_value(
        self, x, expected
    ):
        assert quantize(build_adaptive_grid(SORTED_SAMPLES, 4), x) == expected

    @pytest.mark.parametrize(
        "x",
        [pytest.param(-0.01, id="below"), pytest.param(1.01, id="above")],
    )
    def test_given_value_outside_unit_range_when_quantize_then_quantizer_error_is_raised(self, x):
        with pytest.raises(QuantizerError):
            quantize(build_static_grid(8), x)

    @pytest.mark.parametrize(
        "grid",
        [
            pytest.param(build_static_grid(8), id="static"),
            pytest.param(
                build_adaptive_grid(np.random.default_rng(0).beta(2, 5, 500), 8), id="adaptive"
            ),
        ],
    )
    def test_given_sorted_values_when_quantize_array_then_classes_are_monotone_and_match_scalar(
        self, grid
    ):
        values = np.sort(np.random.default_rng(1).uniform(0.0, 1.0, 300))

        classes = quantize_array(grid, values)

        assert np.all(np.diff(classes) >= 0)
        assert classes.tolist() == [quantize(grid, float(x)) for x in values]

    def test_given_adaptive_grid_when_quantize_array_then_edges_bracket_every_value(self):
        grid = build_adaptive_grid(np.random.default_rng(2).uniform(0.0, 1.0, 200), 8)
        values = np.random.default_rng(4).uniform(0.0, 1.0, 500)

        classes = quantize_array(grid, values)

        assert np.all(grid.edges[classes] <= values)
        assert np.all(values < grid.edges[classes + 1])


class TestBinMidpoint:
    def test_given_static_grid_when_bin_midpoint_then_middle_of_first_bin_is_returned(self):
        assert bin_midpoint(build_static_grid(4), 0) == pytest.approx(0.125)

    def test_given_adaptive_grid_when_bin_midpoint_then_arithmetic_mean_of_edges_is_returned(
        self,
    ):
        assert bin_midpoint(build_adaptive_grid(SORTED_SAMPLES, 4), 2) == pytest.approx(0.65)

    @pytest.mark.parametrize("y", [pytest.param(-1, id="negative"), pytest.param(4, id="m")])
    def test_given_class_out_of_range_when_bin_midpoint_then_quantizer_error_is_raised(self, y):
        with pytest.raises(QuantizerError):
            bin_midpoint(build_static_grid(4), y)

    def test_given_grid_when_midpoints_then_every_midpoint_lies_inside_its_bin(self):
        grid = build_adaptive_grid(SORTED_SAMPLES, 4)

        centres = midpoints(grid)

        np.testing.assert_allclose(centres, [0.1, 0.35, 0.65, 0.9])
        assert np.all(grid.edges[:-1] <= centres)
        assert np.all(centres <= grid.edges[1:])

    def test_given_samples_saturated_at_one_when_build_adaptive_grid_then_empty_top_classes_share_midpoint(  # noqa: E501
        self,
    ):
        grid = build_adaptive_grid([0.1, 0.1] + [1.0] * 6, 4)

        centres = midpoints(grid)

        np.testing.assert_allclose(grid.edges, [0.0, 1.0, 1.0, 1.0, 1.0])
        assert quantize(grid, 1.0) == 3
        np.testing.assert_allclose(centres[1:], 1.0)
        assert centres[0] == pytest.approx(0.5)


class TestDiagnostics:
    def test_given_uniform_samples_when_adaptive_diagnostics_then_classes_are_balanced(self):
        samples = np.random.default_rng(0).uniform(0.0, 1.0, 100_000)

        stats = diagnostics(build_adaptive_grid(samples, 8), samples)

        assert np.all(stats.fractions >= 0.08)
        assert np.all(stats.fractions <= 0.14)
        assert np.all(np.abs(stats.counts - 100_000 / 8) <= 2)

    def test_given_heavy_tailed_samples_when_diagnostics_then_static_grid_is_dominated_by_one_class(  # noqa: E501
        self,
    ):
        rng = np.random.default_rng(5)
        samples = np.concatenate(
            [rng.uniform(0.0, 0.1, 99_900), rng.uniform(0.1, 1.0, 100)]
        )

        static = diagnostics(build_static_grid(8), samples)
        adaptive = diagnostics(build_adaptive_grid(samples, 8), samples)

        assert static.max_fraction >= 0.99
        assert adaptive.max_fraction <= 0.2

    def test_given_empty_class_when_diagnostics_then_fraction_zero_is_reported(self):
        stats = diagnostics(build_static_grid(4), [0.1, 0.2, 0.9])

        assert stats.counts.tolist() == [2, 0, 0, 1]
        assert stats.fractions[1] == 0.0


class TestGridRecord:
    def test_given_grid_when_converted_to_record_and_back_then_grid_is_equal(self):
        grid = build_adaptive_grid(SORTED_SAMPLES, 4)

        assert from_record(to_record(grid)) == grid

    def test_given_record_with_invalid_edges_when_from_record_then_quantizer_error_is_raised(self):
        record = GridRecord(kind=GridKind.adaptive, m=2, edges=[0.0, 0.7, 0.9])

        with pytest.raises(QuantizerError):
            from_record(record)
