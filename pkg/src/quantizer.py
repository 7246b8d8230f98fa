#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Static and adaptive quantization grids over normalized [0, 1] samples.

A grid maps a normalized sample to one of `m` classes. Static grids split the
amplitude range evenly; adaptive grids take their edges from the order
statistics of a training signal so that every class holds (ideally) the same
number of samples.
"""

import dataclasses
import logging
from enum import Enum
from typing import List, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)


class QuantizerError(Exception):
    """Raised when a grid cannot be built or a value cannot be quantized."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class GridKind(str, Enum):
    """Bin edges calculation algorithm of a grid."""

    static = "static"
    adaptive = "adaptive"


@dataclasses.dataclass(frozen=True, eq=False)
class QuantizationGrid:
    """Immutable set of `m + 1` bin edges spanning [0, 1].

    Attributes:
        kind: How the edges were calculated.
        m: Number of classes.
        edges: Non-decreasing edges, `edges[0] == 0` and `edges[m] == 1`.
    """

    kind: GridKind
    m: int
    edges: np.ndarray

    def __post_init__(self):
        edges = np.array(self.edges, dtype=np.float64)
        if self.m < 2:
            raise QuantizerError(f"A grid needs at least 2 classes, got {self.m}")
        if edges.shape != (self.m + 1,):
            raise QuantizerError(f"Expected {self.m + 1} edges, got {edges.shape[0]}")
        if edges[0] != 0.0 or edges[-1] != 1.0:
            raise QuantizerError("Grid edges must start at 0 and end at 1")
        if np.any(np.diff(edges) < 0):
            raise QuantizerError("Grid edges must be non-decreasing")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantizationGrid):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.m == other.m
            and bool(np.array_equal(self.edges, other.edges))
        )

    def __hash__(self) -> int:
        return hash((self.kind, self.m, self.edges.tobytes()))


@dataclasses.dataclass(frozen=True)
class GridDiagnostics:
    """Per-class sample cardinality of a grid applied to a signal."""

    counts: np.ndarray
    fractions: np.ndarray
    median_width: float

    @property
    def max_fraction(self) -> float:
        """Share of samples falling into the most populated class."""
        return float(self.fractions.max()) if self.fractions.size else 0.0


class GridRecord(BaseModel):
    """Self-describing serialized form of a grid."""

    model_config = ConfigDict(frozen=True)

    kind: GridKind
    m: int = Field(ge=2)
    edges: List[float]


def build_static_grid(m: int) -> QuantizationGrid:
    """Return `m` evenly spaced bins spanning the whole normalized amplitude."""
    if m < 2:
        raise QuantizerError(f"A grid needs at least 2 classes, got {m}")
    return QuantizationGrid(kind=GridKind.static, m=m, edges=np.arange(m + 1) / m)


def build_adaptive_grid(samples: Union[Sequence[float], np.ndarray], m: int) -> QuantizationGrid:
    """Return a grid whose inner edges are order statistics of `samples`.

    Inner edge `y` is the sorted sample at index `y * ceil(n / m)`, clamped to the
    last sample. Repeated values may produce equal consecutive edges (empty bins).
    Empty bins at the same edge share a midpoint, so a prediction confusing two
    of them has zero amplitude; `1.0` still maps to the last class even when
    that class is empty.

    Args:
        samples: Normalized training samples of a single channel.
        m: Number of classes.
    """
    if m < 2:
        raise QuantizerError(f"A grid needs at least 2 classes, got {m}")
    values = np.asarray(samples, dtype=np.float64).ravel()
    if values.size == 0:
        raise QuantizerError("Cannot build an adaptive grid from an empty sample vector")
    _check_range(values)
    sorted_samples = np.sort(values)
    n = sorted_samples.size
    step = -(-n // m)
    indices = np.minimum(np.arange(1, m) * step, n - 1)
    edges = np.concatenate(([0.0], sorted_samples[indices], [1.0]))
    logger.debug("Adaptive grid with %s classes built from %s samples", m, n)
    return QuantizationGrid(kind=GridKind.adaptive, m=m, edges=edges)


def build_grid(
    kind: Union[GridKind, str], m: int, samples: Union[Sequence[float], np.ndarray, None] = None
) -> QuantizationGrid:
    """Build a grid of the requested kind; adaptive grids need `samples`."""
    kind_value = getattr(kind, "value", kind)
    if kind_value == GridKind.static.value:
        return build_static_grid(m)
    if kind_value == GridKind.adaptive.value:
        if samples is None:
            raise QuantizerError("Adaptive grids need training samples")
        return build_adaptive_grid(samples, m)
    raise QuantizerError(f"No grid can be built for algorithm `{kind_value}`")


def quantize(grid: QuantizationGrid, x: float) -> int:
    """Return the class of a single normalized value."""
    return int(quantize_array(grid, np.array([x], dtype=np.float64))[0])


def quantize_array(
    grid: QuantizationGrid, values: Union[Sequence[float], np.ndarray]
) -> np.ndarray:
    """Return the class of every value; `1.0` maps to the last class.

    Static grids use `floor(x * m)`. Adaptive grids pick the class whose
    half-open interval `[edges_y, edges_y+1)` contains `x`, so empty bins created
    by repeated edges are never returned.
    """
    x = np.asarray(values, dtype=np.float64)
    _check_range(x)
    if grid.kind == GridKind.static:
        classes = np.floor(x * grid.m).astype(np.int64)
    else:
        classes = np.searchsorted(grid.edges, x, side="right").astype(np.int64) - 1
    return np.clip(classes, 0, grid.m - 1)


def bin_midpoint(grid: QuantizationGrid, y: int) -> float:
    """Return the middle of bin `y`."""
    if not 0 <= y < grid.m:
        raise QuantizerError(f"Class {y} is out of range for a grid of {grid.m} classes")
    return float((grid.edges[y] + grid.edges[y + 1]) / 2)


def midpoints(grid: QuantizationGrid) -> np.ndarray:
    """Return the middle of every bin."""
    return (grid.edges[:-1] + grid.edges[1:]) / 2


def diagnostics(
    grid: QuantizationGrid, samples: Union[Sequence[float], np.ndarray]
) -> GridDiagnostics:
    """Count how many samples fall into each class; empty classes report 0."""
    values = np.asarray(samples, dtype=np.float64).ravel()
    counts = np.bincount(quantize_array(grid, values), minlength=grid.m)
    total = counts.sum()
    fractions = counts / total if total else np.zeros(grid.m)
    return GridDiagnostics(
        counts=counts,
        fractions=fractions,
        median_width=float(np.median(np.diff(grid.edges))),
    )


def to_record(grid: QuantizationGrid) -> GridRecord:
    """Return the serializable record of a grid."""
    return GridRecord(kind=grid.kind, m=grid.m, edges=[float(edge) for edge in grid.edges])


def from_record(record: GridRecord) -> QuantizationGrid:
    """Rebuild a grid from its record, re-checking the edge invariants."""
    return QuantizationGrid(kind=record.kind, m=record.m, edges=np.array(record.edges))


def _check_range(values: np.ndarray) -> None:
    if values.size and not (np.all(values >= 0.0) and np.all(values <= 1.0)):
        raise QuantizerError("Values to quantize must lie in [0, 1]")
