#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Per-anomaly scoring of detected intervals against ground truth.

A detected interval is a true positive when any part of it overlaps a real
anomaly; several detections overlapping one real anomaly all count as true,
and one detection spanning several real anomalies marks all of them found.
True negatives are not defined at this level.
"""

import dataclasses
import logging
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

Interval = Tuple[int, int]

REPORT_CSV_HEADER = (
    "test_set",
    "detected",
    "truth",
    "tp",
    "fp",
    "fn",
    "recall",
    "precision",
    "f1",
    "f2",
    "degenerate",
)


class MetricsError(Exception):
    """Raised when intervals or scoring parameters are not valid."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


@dataclasses.dataclass(frozen=True)
class Score:
    """Recall, precision and F-beta of a count triple."""

    recall: float
    precision: float
    f_beta: float
    degenerate: bool = False


class DetectionReport(BaseModel):
    """Detection quality of one test set."""

    model_config = ConfigDict(frozen=True)

    name: str = ""
    detected: List[Interval]
    truth: List[Interval]
    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    fn: int = Field(ge=0)
    recall: float = Field(ge=0.0, le=1.0)
    precision: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    f2: float = Field(ge=0.0, le=1.0)
    degenerate: bool = False

    def csv_row(self) -> Tuple[object, ...]:
        """Return the flat row matching `REPORT_CSV_HEADER`."""
        return (
            self.name,
            len(self.detected),
            len(self.truth),
            self.tp,
            self.fp,
            self.fn,
            f"{self.recall:.6f}",
            f"{self.precision:.6f}",
            f"{self.f1:.6f}",
            f"{self.f2:.6f}",
            int(self.degenerate),
        )


def _check(intervals: Sequence[Interval], label: str) -> Tuple[np.ndarray, np.ndarray]:
    starts = np.array([int(start) for start, _ in intervals], dtype=np.int64)
    ends = np.array([int(end) for _, end in intervals], dtype=np.int64)
    if np.any(ends <= starts):
        raise MetricsError(f"{label} intervals must have start < end")
    if np.any(starts[1:] < ends[:-1]):
        raise MetricsError(f"{label} intervals must be sorted and disjoint")
    return starts, ends


def _overlapping(
    starts: np.ndarray, ends: np.ndarray, other_starts: np.ndarray, other_ends: np.ndarray
) -> np.ndarray:
    # first other interval ending after each start
    index = np.searchsorted(other_ends, starts, side="right")
    hit = index < other_starts.size
    hit[hit] = other_starts[index[hit]] < ends[hit]
    return hit


def match_intervals(
    detected: Sequence[Interval], truth: Sequence[Interval]
) -> Tuple[int, int, int]:
    """Count true positives, false positives and false negatives.

    Raises:
        MetricsError: If either list is unsorted, overlapping or has empty intervals.
    """
    detected_starts, detected_ends = _check(detected, "Detected")
    truth_starts, truth_ends = _check(truth, "Truth")
    found = _overlapping(detected_starts, detected_ends, truth_starts, truth_ends)
    covered = _overlapping(truth_starts, truth_ends, detected_starts, detected_ends)
    tp = int(found.sum())
    return tp, int(found.size - tp), int(covered.size - covered.sum())


def f_beta(recall: float, precision: float, beta: float) -> float:
    """Return the F-beta score of a recall and precision; 0 when both are 0."""
    if not beta > 0.0:
        raise MetricsError(f"beta must be positive, got {beta}")
    weight = beta**2
    denominator = recall + weight * precision
    if denominator == 0.0:
        return 0.0
    return (1.0 + weight) * recall * precision / denominator


def score(tp: int, fp: int, fn: int, beta: float = 1.0) -> Score:
    """Return recall, precision and F-beta; undefined ratios become 0 with a flag."""
    if min(tp, fp, fn) < 0:
        raise MetricsError("Counts must be non-negative")
    degenerate = False
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall, degenerate = 0.0, True
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision, degenerate = 0.0, True
    value = f_beta(recall, precision, beta)
    if recall + beta**2 * precision == 0.0:
        degenerate = True
    return Score(recall=recall, precision=precision, f_beta=value, degenerate=degenerate)


def evaluate(
    detected: Sequence[Interval], truth: Sequence[Interval], name: str = ""
) -> DetectionReport:
    """Match detections with the ground truth and score them with F1 and F2."""
    tp, fp, fn = match_intervals(detected, truth)
    f1 = score(tp, fp, fn, beta=1.0)
    f2 = score(tp, fp, fn, beta=2.0)
    if f1.degenerate:
        logger.warning("Degenerate metrics for %s: tp=%s fp=%s fn=%s", name, tp, fp, fn)
    report = DetectionReport(
        name=name,
        detected=[(int(start), int(end)) for start, end in detected],
        truth=[(int(start), int(end)) for start, end in truth],
        tp=tp,
        fp=fp,
        fn=fn,
        recall=f1.recall,
        precision=f1.precision,
        f1=f1.f_beta,
        f2=f2.f_beta,
        degenerate=f1.degenerate,
    )
    logger.info(
        "%s: recall %.4f, precision %.4f, F1 %.4f, F2 %.4f",
        name or "report",
        report.recall,
        report.precision,
        report.f1,
        report.f2,
    )
    return report
