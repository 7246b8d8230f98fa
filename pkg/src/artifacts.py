#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Atomic writers and the file names of a detector run directory."""

import csv
import io
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from pydantic import BaseModel

logger = logging.getLogger(__name__)

MODEL_BUNDLE_FILE_NAME = "model.json"
RULES_FILE_NAME = "rules.json"
TRAIN_REPORT_FILE_NAME = "train_report.json"
THRESHOLDS_REPORT_FILE_NAME = "thresholds.txt"
CANDIDATES_FILE_NAME = "candidates.csv"
SWEEP_TABLE_FILE_NAME = "sweep.csv"
SETUP_SUMMARY_FILE_NAME = "setup.json"


def detection_file_name(test_set: str) -> str:
    """Return the detection intervals file name of a test set."""
    return f"detection_{test_set}.json"


def metrics_file_name(test_set: str) -> str:
    """Return the metrics CSV file name of a test set."""
    return f"metrics_{test_set}.csv"


def trace_file_name(test_set: str) -> str:
    """Return the per-sample trace file name of a test set."""
    return f"trace_{test_set}.csv"


def write_atomic(path: Path, content: str) -> None:
    """Write text to `path` through a temporary file renamed over the target.

    Args:
        path: Destination file; parent directories are created.
        content: Text to write.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as tmp:
            tmp.write(content)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.debug("Wrote %s", path)


def write_json_model(path: Path, model: BaseModel) -> None:
    """Write a pydantic model as indented JSON."""
    write_atomic(path, model.model_dump_json(indent=1) + "\n")


def render_csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    """Render a header and rows as CSV text with `\\n` line endings."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_csv_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    """Write a CSV table atomically."""
    write_atomic(path, render_csv(header, rows))
