#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Text reports and plot-ready tables of detector runs."""

import csv
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Sequence, Tuple

from jinja2 import Environment, FileSystemLoader, StrictUndefined
from pydantic import BaseModel, ConfigDict

from analyzer import (
    AnomalyCandidate,
    DetectionRun,
    RuleSet,
    ThresholdSearchResult,
    histogram_rows,
)
from artifacts import (
    CANDIDATES_FILE_NAME,
    SWEEP_TABLE_FILE_NAME,
    render_csv,
    write_atomic,
    write_csv_rows,
)
from detector_config import SUPPORTED_THRESHOLDS
from metrics import REPORT_CSV_HEADER, DetectionReport
from quantizer import QuantizationGrid, diagnostics

if TYPE_CHECKING:
    from pipeline import DetectorSetup

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent / "templates"
THRESHOLDS_TEMPLATE = "thresholds.txt.j2"
DETECTION_TEMPLATE = "detection_report.txt.j2"
CANDIDATES_HEADER = ("start", "length", "cum_amp", "max_amp")
TRACE_HEADER = ("t", "real_class", "predicted_class", "in_anomaly")
HISTOGRAM_HEADER = ("x_property", "x_low", "x_high", "y_property", "y_low", "y_high", "count")
ACCURACY_HEADER = ("parameter", "value", "candidate", "train_accuracy", "validation_accuracy")
GRID_HEADER = ("channel", "class", "low", "high", "count", "fraction")
HISTOGRAM_FILE_NAME = "false_anomaly_histogram.csv"
ACCURACY_FILE_NAME = "accuracy_vs_hyperparameters.csv"
TRACE_PATTERN = "trace_*.csv"
NON_PARAMETER_COLUMNS = frozenset(
    ("rank", "candidate", "parameters", "train_accuracy", "validation_accuracy", "saved_area")
)


class ReportError(Exception):
    """Raised when the artifacts a report needs are missing or unreadable."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class DetectionRecord(BaseModel):
    """Anomaly intervals detected on one series."""

    model_config = ConfigDict(frozen=True)

    name: str
    candidates: int
    intervals: List[Tuple[int, int]]


class SetupSummary(BaseModel):
    """Headline numbers of a detector setup."""

    model_config = ConfigDict(frozen=True)

    params: Dict[str, Any]
    preprocess: Dict[str, Any]
    model: Dict[str, Any]
    training: Dict[str, Any]
    parameters: int
    train_accuracy: float
    validation_accuracy: float
    false_maxima: Dict[str, float]
    thresholds: Dict[str, float]
    active_rules: List[str]
    saved_area: float
    metrics: List[List[Any]]


def _environment() -> Environment:
    return Environment(
        loader=FileSystemLoader(TEMPLATES_DIR),
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )


def render_thresholds_report(search: ThresholdSearchResult, rules: RuleSet) -> str:
    """Render the outcome of the threshold search and the rules in force."""
    rows = [
        {
            "name": name,
            "maximum": search.maxima.get(name, 0.0),
            "threshold": rules.thresholds.get(name, 0.0),
            "bins": len(search.threshold_candidates.get(name, ())),
        }
        for name in search.properties
    ]
    return (
        _environment()
        .get_template(THRESHOLDS_TEMPLATE)
        .render(
            candidate_count=search.candidate_count,
            degenerate=search.degenerate,
            valid_combinations=search.valid_combinations,
            saved_area=search.saved_area,
            rows=rows,
            active_rules=rules.active_rules,
        )
    )


def render_detection_report(report: DetectionReport) -> str:
    """Render the detection quality of a test set."""
    return _environment().get_template(DETECTION_TEMPLATE).render(report=report)


def write_metrics(path: Path, report: DetectionReport) -> None:
    """Write the metrics CSV of a test set."""
    write_csv_rows(path, REPORT_CSV_HEADER, [report.csv_row()])


def candidate_rows(
    candidates: Sequence[AnomalyCandidate],
) -> Tuple[Sequence[str], List[Tuple[int, int, str, str]]]:
    """Return the header and rows of a candidates table."""
    rows = [(c.start, c.length, repr(c.cum_amp), repr(c.max_amp)) for c in candidates]
    return CANDIDATES_HEADER, rows


def detection_json(name: str, run: DetectionRun) -> str:
    """Return the detection record of a series as JSON."""
    record = DetectionRecord(name=name, candidates=len(run.candidates), intervals=run.intervals)
    return record.model_dump_json(indent=1) + "\n"


def read_detection(path: Path) -> DetectionRecord:
    """Read a detection record written by `detection_json`."""
    try:
        return DetectionRecord.model_validate_json(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ReportError(f"Could not read detection record {path}: {exc}") from exc


def setup_summary_json(setup: "DetectorSetup") -> str:
    """Return the summary of a setup as JSON."""
    summary = SetupSummary(
        params={key: getattr(value, "value", value) for key, value in setup.params.items()},
        preprocess=setup.config.preprocess.model_dump(mode="json"),
        model=setup.config.model.model_dump(mode="json"),
        training=setup.config.training.model_dump(mode="json"),
        parameters=setup.parameters,
        train_accuracy=setup.train_accuracy,
        validation_accuracy=setup.validation_accuracy,
        false_maxima=setup.false_maxima,
        thresholds=dict(setup.rules.thresholds),
        active_rules=setup.rules.active_rules,
        saved_area=setup.search.saved_area,
        metrics=[list(report.csv_row()) for report in setup.reports.values()],
    )
    return summary.model_dump_json(indent=1) + "\n"


def grid_table(
    channel_names: Sequence[str],
    grids: Sequence[QuantizationGrid],
    samples: Sequence[Sequence[float]],
) -> List[Tuple[str, int, float, float, int, str]]:
    """Return per-class sample cardinality of every channel grid."""
    rows = []
    for name, grid, values in zip(channel_names, grids, samples):
        stats = diagnostics(grid, values)
        for y in range(grid.m):
            rows.append(
                (
                    name,
                    y,
                    float(grid.edges[y]),
                    float(grid.edges[y + 1]),
                    int(stats.counts[y]),
                    f"{stats.fractions[y]:.6f}",
                )
            )
    return rows


def _read_table(path: Path) -> List[Dict[str, str]]:
    try:
        with path.open(newline="") as handle:
            return list(csv.DictReader(handle))
    except OSError as exc:
        raise ReportError(f"Could not read {path}: {exc}") from exc


def false_anomaly_histogram(
    rows: Sequence[Dict[str, str]], x: str = "length", y: str = "cum_amp"
) -> List[Tuple[Any, ...]]:
    """Return long-format histogram rows of two candidate properties."""
    if x not in SUPPORTED_THRESHOLDS or y not in SUPPORTED_THRESHOLDS:
        raise ReportError(f"Unknown candidate properties `{x}`, `{y}`")
    cells = histogram_rows([float(r[x]) for r in rows], [float(r[y]) for r in rows])
    return [(x, x_lo, x_hi, y, y_lo, y_hi, count) for x_lo, x_hi, y_lo, y_hi, count in cells]


def accuracy_table(rows: Sequence[Dict[str, str]]) -> List[Tuple[str, str, str, str, str]]:
    """Return accuracy against every swept hyper-parameter, one row per candidate."""
    if not rows:
        return []
    parameters = [
        column
        for column in rows[0]
        if column not in NON_PARAMETER_COLUMNS
        and not column.startswith(("false_max_", "threshold_"))
        and "." not in column
    ]
    return [
        (
            parameter,
            row[parameter],
            row["candidate"],
            row["train_accuracy"],
            row["validation_accuracy"],
        )
        for parameter in parameters
        for row in rows
    ]


def report(run_dir: Path, out_dir: Path) -> List[Path]:
    """Emit plot-ready tables from the artifacts of a run directory.

    Raises:
        ReportError: If the directory holds no candidates, sweep table or trace.
    """
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    written: List[Path] = []
    candidates = run_dir / CANDIDATES_FILE_NAME
    if candidates.is_file():
        path = out_dir / HISTOGRAM_FILE_NAME
        write_csv_rows(path, HISTOGRAM_HEADER, false_anomaly_histogram(_read_table(candidates)))
        written.append(path)
    table = run_dir / SWEEP_TABLE_FILE_NAME
    if table.is_file():
        path = out_dir / ACCURACY_FILE_NAME
        write_atomic(path, render_csv(ACCURACY_HEADER, accuracy_table(_read_table(table))))
        written.append(path)
    for trace in sorted(run_dir.glob(TRACE_PATTERN)):
        path = out_dir / trace.name
        if path.resolve() != trace.resolve():
            rows = _read_table(trace)
            write_csv_rows(path, TRACE_HEADER, ([row[c] for c in TRACE_HEADER] for row in rows))
        written.append(path)
    if not written:
        raise ReportError(f"No run artifacts found in {run_dir}")
    logger.info("Wrote %s plot data files to %s", len(written), out_dir)
    return written
