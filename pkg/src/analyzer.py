#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Turns prediction errors into anomaly candidates and filters them with rules.

A candidate is a run of samples whose predicted class differs from the real
one. Each candidate has a length, a cumulative amplitude and a maximum
amplitude, where the amplitude of a sample is the distance between the
midpoints of the real and the predicted output bins. A rule set keeps the
candidates that strictly exceed every active threshold. Thresholds are chosen
automatically on anomaly-free training data as the combination that filters
every training candidate while leaving the largest normalized area above it.
"""

import dataclasses
import itertools
import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, computed_field, field_validator

from artifacts import write_json_model
from detector_config import SUPPORTED_THRESHOLDS, AnalyzerConfig, RejectionMode
from quantizer import QuantizationGrid, midpoints

logger = logging.getLogger(__name__)

UNIT_BINS_MAX_RANGE = 64
AREA_TOLERANCE = 1e-12
CHUNK_ELEMENTS = 1 << 22


class AnalyzerError(Exception):
    """Raised when candidates cannot be collected, filtered or searched."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


@dataclasses.dataclass(frozen=True, eq=False)
class AnomalyCandidate:
    """A run of samples the model did not predict correctly.

    Attributes:
        start: Sample index of the first sample.
        amplitudes: Non-negative per-sample amplitude.
    """

    start: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = np.array(self.amplitudes, dtype=np.float64).ravel()
        if amplitudes.size < 1:
            raise AnalyzerError("A candidate holds at least one sample")
        if np.any(amplitudes < 0) or not np.all(np.isfinite(amplitudes)):
            raise AnalyzerError("Candidate amplitudes must be finite and non-negative")
        amplitudes.setflags(write=False)
        object.__setattr__(self, "amplitudes", amplitudes)

    @property
    def length(self) -> int:
        """Number of samples."""
        return int(self.amplitudes.size)

    @property
    def end(self) -> int:
        """Index one past the last sample."""
        return self.start + self.length

    @property
    def max_amp(self) -> float:
        """Largest per-sample amplitude."""
        return float(self.amplitudes.max())

    @property
    def cum_amp(self) -> float:
        """Sum of the per-sample amplitudes."""
        return float(self.amplitudes.sum())

    def value(self, name: str) -> float:
        """Return the named property."""
        if name == "length":
            return float(self.length)
        if name == "cum_amp":
            return self.cum_amp
        if name == "max_amp":
            return self.max_amp
        raise AnalyzerError(f"Unknown candidate property `{name}`")


class RuleSet(BaseModel):
    """Threshold per candidate property; zero thresholds are inactive."""

    model_config = ConfigDict(frozen=True)

    thresholds: Dict[str, float]

    @field_validator("thresholds")
    @classmethod
    def validate_thresholds(cls, value: Dict[str, float]) -> Dict[str, float]:
        """Validate rule names and that thresholds are non-negative."""
        for name, threshold in value.items():
            if name not in SUPPORTED_THRESHOLDS:
                raise ValueError(f"unknown rule `{name}`")
            if not threshold >= 0.0:
                raise ValueError(f"threshold of `{name}` must be non-negative")
        return value

    @computed_field  # type: ignore[prop-decorator]
    @property
    def active_rules(self) -> List[str]:
        """Properties whose threshold is above zero, in rule order."""
        return [name for name, threshold in self.thresholds.items() if threshold > 0.0]

    @classmethod
    def from_thresholds(cls, thresholds: Mapping[str, float]) -> "RuleSet":
        """Build a rule set, reporting invalid rules as `AnalyzerError`."""
        try:
            return cls(thresholds=dict(thresholds))
        except ValidationError as exc:
            raise AnalyzerError(f"Invalid rules: {exc.errors()[0]['msg']}") from exc

    def raised(self, name: str, threshold: float) -> "RuleSet":
        """Return a copy with one threshold replaced."""
        return RuleSet.from_thresholds({**self.thresholds, name: threshold})


@dataclasses.dataclass(frozen=True)
class RejectionPolicy:
    """When an open candidate is closed by correct predictions.

    `first_true` closes it at the first correct prediction. `true_count` needs
    `required_true` consecutive correct predictions. `true_ratio` closes it once
    the ratio of correct to incorrect predictions exceeds `max_true_ratio`.
    Correct predictions left inside a candidate have zero amplitude.
    """

    mode: RejectionMode = RejectionMode.first_true
    required_true: int = 1
    max_true_ratio: float = 0.5

    @classmethod
    def from_config(cls, config: AnalyzerConfig) -> "RejectionPolicy":
        """Build the policy of an analyzer configuration."""
        return cls(
            mode=config.rejection,
            required_true=config.required_true,
            max_true_ratio=config.max_true_ratio,
        )


@dataclasses.dataclass(frozen=True)
class DetectionRun:
    """All candidates of a series and the ones confirmed as anomalies."""

    candidates: Tuple[AnomalyCandidate, ...]
    anomalies: Tuple[AnomalyCandidate, ...]

    @property
    def intervals(self) -> List[Tuple[int, int]]:
        """Confirmed anomalies as sorted `[start, end)` intervals."""
        return [(candidate.start, candidate.end) for candidate in self.anomalies]


@dataclasses.dataclass(frozen=True)
class ThresholdSearchResult:
    """Outcome of the automatic threshold search.

    Attributes:
        properties: Searched properties in search order.
        maxima: Largest value of every property among the training candidates.
        rules: Best combination found.
        saved_area: Normalized area above the best combination.
        threshold_candidates: Thresholds tried per property.
        candidate_count: Number of training candidates.
        valid_combinations: How many combinations filtered every candidate.
        degenerate: True when there were no candidates to learn from.
    """

    properties: Tuple[str, ...]
    maxima: Dict[str, float]
    rules: RuleSet
    saved_area: float
    threshold_candidates: Dict[str, np.ndarray]
    candidate_count: int
    valid_combinations: int
    degenerate: bool = False


def _mismatch_runs(mismatch: np.ndarray) -> List[Tuple[int, int]]:
    padded = np.concatenate(([False], mismatch, [False])).astype(np.int8)
    changes = np.flatnonzero(np.diff(padded))
    return list(zip(changes[::2].tolist(), changes[1::2].tolist()))


def _policy_runs(mismatch: np.ndarray, policy: RejectionPolicy) -> List[Tuple[int, int]]:
    runs = []
    flags = mismatch.tolist()
    index = 0
    while index < len(flags):
        if not flags[index]:
            index += 1
            continue
        start = end = index
        wrong = correct = streak = 0
        while index < len(flags):
            if flags[index]:
                wrong += 1
                streak = 0
                end = index + 1
            else:
                correct += 1
                streak += 1
                if policy.mode == RejectionMode.true_count and streak >= policy.required_true:
                    break
                ratio = correct / wrong
                if policy.mode == RejectionMode.true_ratio and ratio > policy.max_true_ratio:
                    break
            index += 1
        runs.append((start, end))
    return runs


def collect_candidates(
    predicted: Sequence[int],
    real: Sequence[int],
    grid: QuantizationGrid,
    policy: Optional[RejectionPolicy] = None,
    offset: int = 0,
) -> List[AnomalyCandidate]:
    """Group prediction errors into candidates.

    A mismatch between two classes with the same midpoint (empty adaptive bins
    at one edge) joins a candidate with zero amplitude.

    Args:
        predicted: Predicted output classes.
        real: Real output classes at the same sample indices.
        grid: Output grid whose bin midpoints give the amplitudes.
        policy: Candidate closing policy; defaults to closing on the first correct prediction.
        offset: Sample index of the first prediction.
    """
    predicted_classes = np.asarray(predicted, dtype=np.int64)
    real_classes = np.asarray(real, dtype=np.int64)
    if predicted_classes.shape != real_classes.shape or predicted_classes.ndim != 1:
        raise AnalyzerError(
            f"Predicted and real sequences differ in length: "
            f"{predicted_classes.shape} vs {real_classes.shape}"
        )
    for classes in (predicted_classes, real_classes):
        if classes.size and (classes.min() < 0 or classes.max() >= grid.m):
            raise AnalyzerError(f"Classes must lie in [0, {grid.m})")
    policy = policy or RejectionPolicy()
    centers = midpoints(grid)
    amplitudes = np.abs(centers[real_classes] - centers[predicted_classes])
    mismatch = predicted_classes != real_classes
    if policy.mode == RejectionMode.first_true:
        runs = _mismatch_runs(mismatch)
    else:
        runs = _policy_runs(mismatch, policy)
    candidates = [
        AnomalyCandidate(start=offset + start, amplitudes=amplitudes[start:end])
        for start, end in runs
    ]
    logger.debug("Collected %s candidates from %s predictions", len(candidates), mismatch.size)
    return candidates


def candidate_properties(
    candidates: Sequence[AnomalyCandidate], properties: Sequence[str] = SUPPORTED_THRESHOLDS
) -> np.ndarray:
    """Return a (candidates, properties) matrix of property values."""
    values = np.zeros((len(candidates), len(properties)))
    for row, candidate in enumerate(candidates):
        for column, name in enumerate(properties):
            values[row, column] = candidate.value(name)
    return values


def apply_rules(candidates: Sequence[AnomalyCandidate], rules: RuleSet) -> DetectionRun:
    """Confirm the candidates that strictly exceed every active threshold."""
    active = rules.active_rules
    if not active:
        confirmed = tuple(candidates)
    else:
        values = candidate_properties(candidates, active)
        limits = np.array([rules.thresholds[name] for name in active])
        above = np.all(values > limits, axis=1) if len(candidates) else np.zeros(0, bool)
        confirmed = tuple(c for c, keep in zip(candidates, above.tolist()) if keep)
    return DetectionRun(candidates=tuple(candidates), anomalies=confirmed)


def detect(
    predicted: Sequence[int],
    real: Sequence[int],
    grid: QuantizationGrid,
    rules: RuleSet,
    offset: int = 0,
    policy: Optional[RejectionPolicy] = None,
) -> DetectionRun:
    """Collect candidates and keep the ones the rules confirm."""
    return apply_rules(collect_candidates(predicted, real, grid, policy, offset), rules)


def bin_edges(values: Sequence[float]) -> np.ndarray:
    """Return the edges compartmentalizing a property range.

    Integer-valued properties spanning fewer than 64 units get one edge per
    value; other properties get Sturges' `ceil(log2 n) + 1` equal-width bins.
    """
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        return np.zeros(0)
    low, high = float(data.min()), float(data.max())
    if high == low:
        return np.array([low])
    if np.all(data == np.round(data)) and high - low < UNIT_BINS_MAX_RANGE:
        return np.arange(low, high + 1.0)
    bins = math.ceil(math.log2(data.size)) + 1
    return np.linspace(low, high, bins + 1)


def threshold_candidates(values: Sequence[float]) -> np.ndarray:
    """Return the sorted thresholds tried for a property: zero plus every bin edge."""
    return np.unique(np.concatenate(([0.0], bin_edges(values))))


def saved_area(thresholds: Sequence[float], maxima: Sequence[float]) -> float:
    """Return `1 - prod(t / max)` over the active thresholds; 0 without any."""
    active = [(t, m) for t, m in zip(thresholds, maxima) if t > 0.0]
    if not active:
        return 0.0
    return 1.0 - float(np.prod([t / m if m > 0.0 else 1.0 for t, m in active]))


def _valid_combinations(exceed: List[np.ndarray]) -> np.ndarray:
    shape = tuple(len(row) for row in exceed)
    count = exceed[0].shape[1]
    if len(exceed) == 1:
        return ~exceed[0].any(axis=1)
    last = exceed[-1].astype(np.float64).T
    prefix_shape = shape[:-1]
    prefix_count = int(np.prod(prefix_shape))
    valid = np.empty((prefix_count, shape[-1]), dtype=bool)
    chunk = max(1, CHUNK_ELEMENTS // max(count, 1))
    for start in range(0, prefix_count, chunk):
        flat = np.arange(start, min(start + chunk, prefix_count))
        mask = np.ones((flat.size, count), dtype=bool)
        for axis, sub in enumerate(np.unravel_index(flat, prefix_shape)):
            mask &= exceed[axis][sub]
        valid[flat] = (mask.astype(np.float64) @ last) == 0
    return valid.reshape(shape)


def _area_grid(grids: List[np.ndarray], maxima: np.ndarray) -> np.ndarray:
    product = np.ones(tuple(len(g) for g in grids))
    any_active = np.zeros(product.shape, dtype=bool)
    for axis, (thresholds, maximum) in enumerate(zip(grids, maxima)):
        shape = [1] * len(grids)
        shape[axis] = len(thresholds)
        active = thresholds > 0.0
        factor = np.where(active & (maximum > 0.0), thresholds / (maximum or 1.0), 1.0)
        product = product * factor.reshape(shape)
        any_active = any_active | active.reshape(shape)
    return np.where(any_active, 1.0 - product, 0.0)


def fallback_thresholds(
    candidates: Sequence[AnomalyCandidate], properties: Sequence[str], maxima: Sequence[float]
) -> Dict[str, float]:
    """Return the combination used when no threshold vector saves any area.

    The first property with a positive maximum is set to that maximum. When
    every searched maximum is zero (zero-amplitude candidates), a `length`
    rule at the longest candidate is added, since every length is at least 1.
    """
    thresholds = dict.fromkeys(properties, 0.0)
    for name, maximum in zip(properties, maxima):
        if maximum > 0.0:
            thresholds[name] = float(maximum)
            return thresholds
    thresholds["length"] = float(max(candidate.length for candidate in candidates))
    return thresholds


def auto_thresholds(
    candidates: Sequence[AnomalyCandidate], properties: Sequence[str] = SUPPORTED_THRESHOLDS
) -> ThresholdSearchResult:
    """Find the threshold combination filtering every training candidate.

    All combinations of per-property thresholds are enumerated; a combination
    is valid when no candidate strictly exceeds all of its active thresholds.
    Among valid combinations the one with the largest saved area wins, ties
    going to the lexicographically lowest threshold vector. Without any
    positive area the combination of `fallback_thresholds` is used.

    Raises:
        AnalyzerError: If a property is unknown or the result fails to filter a candidate.
    """
    properties = tuple(properties)
    for name in properties:
        if name not in SUPPORTED_THRESHOLDS:
            raise AnalyzerError(f"Unknown candidate property `{name}`")
    if not candidates:
        logger.warning("No training candidates; thresholds stay at zero")
        return ThresholdSearchResult(
            properties=properties,
            maxima={name: 0.0 for name in properties},
            rules=RuleSet.from_thresholds({name: 0.0 for name in properties}),
            saved_area=0.0,
            threshold_candidates={name: np.zeros(1) for name in properties},
            candidate_count=0,
            valid_combinations=0,
            degenerate=True,
        )
    values = candidate_properties(candidates, properties)
    maxima = values.max(axis=0)
    grids = [threshold_candidates(values[:, axis]) for axis in range(len(properties))]
    exceed = [
        np.where((grid > 0.0)[:, None], values[:, axis][None, :] > grid[:, None], True)
        for axis, grid in enumerate(grids)
    ]
    valid = _valid_combinations(exceed)
    areas = np.where(valid, _area_grid(grids, maxima), -np.inf)
    best = fallback_thresholds(candidates, properties, maxima.tolist())
    best_area = 0.0
    top = float(areas.max())
    if top > AREA_TOLERANCE:
        flat = int(np.flatnonzero(areas.ravel() >= top - AREA_TOLERANCE)[0])
        index = np.unravel_index(flat, areas.shape)
        best = {name: float(grid[i]) for name, grid, i in zip(properties, grids, index)}
        best_area = float(areas[index])
    rules = RuleSet.from_thresholds(best)
    residual = apply_rules(candidates, rules).anomalies
    if residual:
        raise AnalyzerError(
            f"Selected thresholds leave {len(residual)} training candidates unfiltered"
        )
    logger.info(
        "Selected thresholds %s over %s candidates, saved area %.4f",
        rules.thresholds,
        len(candidates),
        best_area,
    )
    return ThresholdSearchResult(
        properties=properties,
        maxima={name: float(value) for name, value in zip(properties, maxima)},
        rules=rules,
        saved_area=best_area,
        threshold_candidates=dict(zip(properties, grids)),
        candidate_count=len(candidates),
        valid_combinations=int(valid.sum()),
    )


def brute_force_thresholds(
    candidates: Sequence[AnomalyCandidate], properties: Sequence[str] = SUPPORTED_THRESHOLDS
) -> Tuple[Dict[str, float], float]:
    """Exhaustively score every threshold combination with `apply_rules`.

    Slow reference for small populations; returns the winning thresholds and area.
    """
    values = candidate_properties(candidates, properties)
    maxima = values.max(axis=0).tolist()
    grids = [threshold_candidates(values[:, axis]).tolist() for axis in range(len(properties))]
    best = fallback_thresholds(candidates, properties, maxima)
    best_area = 0.0
    for combination in itertools.product(*grids):
        rules = RuleSet.from_thresholds(dict(zip(properties, combination)))
        if apply_rules(candidates, rules).anomalies:
            continue
        area = saved_area(combination, maxima)
        if area > best_area + AREA_TOLERANCE:
            best, best_area = dict(zip(properties, combination)), area
    return best, best_area


def candidate_histogram(
    candidates: Sequence[AnomalyCandidate], x: str, y: str
) -> List[Tuple[float, float, float, float, int]]:
    """Return a long-format 2-D histogram of two candidate properties.

    Rows are `(x_low, x_high, y_low, y_high, count)` over the same bins the
    threshold search uses.
    """
    values = candidate_properties(candidates, (x, y))
    return histogram_rows(values[:, 0], values[:, 1])


def histogram_rows(
    x_values: Sequence[float], y_values: Sequence[float]
) -> List[Tuple[float, float, float, float, int]]:
    """Return `(x_low, x_high, y_low, y_high, count)` rows of a 2-D histogram."""
    xs = np.asarray(x_values, dtype=np.float64)
    ys = np.asarray(y_values, dtype=np.float64)
    if xs.size == 0:
        return []
    edges = [_histogram_edges(xs), _histogram_edges(ys)]
    counts, x_edges, y_edges = np.histogram2d(xs, ys, bins=edges)
    return [
        (
            float(x_edges[i]),
            float(x_edges[i + 1]),
            float(y_edges[j]),
            float(y_edges[j + 1]),
            int(counts[i, j]),
        )
        for i, j in itertools.product(range(counts.shape[0]), range(counts.shape[1]))
    ]


def _histogram_edges(values: np.ndarray) -> np.ndarray:
    edges = bin_edges(values)
    if edges.size == 1:
        return np.array([edges[0] - 0.5, edges[0] + 0.5])
    return edges


def save_rules(rules: RuleSet, path: Path) -> None:
    """Persist a rule set next to its model bundle."""
    write_json_model(path, rules)
    logger.info("Saved rules %s to %s", rules.thresholds, path)


def load_rules(path: Path) -> RuleSet:
    """Read a rule set written by `save_rules`."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise AnalyzerError(f"Could not read rules {path}: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("thresholds"), dict):
        raise AnalyzerError(f"Rules file {path} has no thresholds")
    return RuleSet.from_thresholds(raw["thresholds"])


def split_by_truth(
    anomalies: Iterable[AnomalyCandidate], truth: Sequence[Tuple[int, int]]
) -> Tuple[List[AnomalyCandidate], List[AnomalyCandidate]]:
    """Split confirmed anomalies into those overlapping a truth interval and the rest."""
    starts = np.array([start for start, _ in truth], dtype=np.int64)
    ends = np.array([end for _, end in truth], dtype=np.int64)
    hits, misses = [], []
    for candidate in anomalies:
        overlapping = bool(np.any((starts < candidate.end) & (ends > candidate.start)))
        (hits if overlapping else misses).append(candidate)
    return hits, misses
