#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Command line entry point of the detector life cycle.

Every sub-command loads and validates the configuration first, then reads its
inputs and writes its artifacts into the `--out` directory. Exit codes are 0
on success, 1 when the detector cannot produce a result and 2 for invalid
usage or configuration.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np

import reporting
from analyzer import (
    AnalyzerError,
    RejectionPolicy,
    auto_thresholds,
    load_rules,
    save_rules,
)
from artifacts import (
    CANDIDATES_FILE_NAME,
    RULES_FILE_NAME,
    THRESHOLDS_REPORT_FILE_NAME,
    detection_file_name,
    metrics_file_name,
    trace_file_name,
    write_atomic,
    write_csv_rows,
)
from baseline_features import FeatureError, window_scan, write_feature_csv
from detector_config import ChannelConversion, ConfigInvalidError, DetectorConfig
from gru_model import (
    ConfigMismatchError,
    GruModelError,
    ModelBundle,
    check_compatible,
    load,
)
from metrics import MetricsError, evaluate
from pipeline import (
    DetectorData,
    PipelineError,
    build_grids,
    design_detector,
    detect_series,
    normalize_data,
    predict_series,
    run_setup,
    series_candidates,
    sweep,
)
from quantizer import QuantizerError
from signal_io import RawSeries, SignalIOError, convert_physical, load_csv, normalize, write_csv
from synth import SynthError, build_corpus, preset

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "QG_LOG_LEVEL"
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
GRID_DIAGNOSTICS_FILE_NAME = "grid_diagnostics.csv"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

USAGE_ERRORS = (ConfigInvalidError, ConfigMismatchError)
DOMAIN_ERRORS = (
    SignalIOError,
    QuantizerError,
    GruModelError,
    AnalyzerError,
    MetricsError,
    SynthError,
    FeatureError,
    PipelineError,
    reporting.ReportError,
)


def configure_logging() -> None:
    """Configure the root logger from `QG_LOG_LEVEL` (error, info or debug)."""
    name = os.environ.get(LOG_LEVEL_ENV, "info").strip().lower()
    level = LOG_LEVELS.get(name, logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    if name not in LOG_LEVELS:
        logger.warning("Unknown %s `%s`, using info", LOG_LEVEL_ENV, name)


def _read_series(path: Path, config: DetectorConfig) -> RawSeries:
    series = load_csv(path)
    if not config.conversion:
        return series
    conversions = [
        config.conversion.get(name, ChannelConversion(multiplier=1.0))
        for name in series.channel_names
    ]
    return convert_physical(series, conversions)


def _read_data(args: argparse.Namespace, config: DetectorConfig) -> DetectorData:
    return DetectorData(
        train=tuple(_read_series(path, config) for path in args.train),
        tests={path.stem: _read_series(path, config) for path in args.test},
    )


def cmd_gen(args: argparse.Namespace, config: DetectorConfig) -> None:
    """Write a normal training series and a test series with injected steps."""
    synth = preset(config.synth, args.preset) if args.preset else config.synth
    train, test = build_corpus(synth)
    write_csv(train, args.out / f"{train.name}.csv")
    write_csv(test, args.out / f"{test.name}.csv")


def cmd_preprocess(args: argparse.Namespace, config: DetectorConfig) -> None:
    """Write normalized series and the per-class cardinality of the grids."""
    data = _read_data(args, config)
    _, train, tests = normalize_data(data, config.preprocess)
    in_grids, _ = build_grids(train, config.preprocess)
    for series in (*train, *tests.values()):
        write_csv(series, args.out / f"{series.name}-normalized.csv")
    samples = np.concatenate([series.channels for series in train], axis=1)
    rows = reporting.grid_table(train[0].channel_names, in_grids, samples)
    write_csv_rows(args.out / GRID_DIAGNOSTICS_FILE_NAME, reporting.GRID_HEADER, rows)


def cmd_train(args: argparse.Namespace, config: DetectorConfig) -> None:
    """Train a detector setup and write every artifact of it."""
    init_from = load(args.init_from) if args.init_from else None
    setup = run_setup(_read_data(args, config), config, out_dir=args.out, init_from=init_from)
    for name, report in setup.reports.items():
        logger.info("%s: F1 %.4f, F2 %.4f", name, report.f1, report.f2)


def _check_bundle(
    args: argparse.Namespace,
    config: DetectorConfig,
    bundle: ModelBundle,
    channel_names: Sequence[str],
) -> None:
    """Compare the configured preprocessing with the bundle's.

    Without `--config` the bundle's own preprocessing is used and only the
    channel names are checked.
    """
    preprocess = config.preprocess if args.config is not None else bundle.preprocess
    check_compatible(bundle, preprocess, channel_names)


def cmd_auto_thresholds(args: argparse.Namespace, config: DetectorConfig) -> None:
    """Search the rules of a trained model on anomaly-free series."""
    bundle = load(args.model)
    policy = RejectionPolicy.from_config(config.analyzer)
    candidates = []
    for path in args.train:
        series = _read_series(path, config)
        _check_bundle(args, config, bundle, series.channel_names)
        trace = predict_series(bundle, normalize(series, bundle.norm_bounds))
        candidates += series_candidates(trace, bundle, policy)
    search = auto_thresholds(candidates, config.analyzer.thresholds)
    save_rules(search.rules, args.out / RULES_FILE_NAME)
    write_atomic(
        args.out / THRESHOLDS_REPORT_FILE_NAME,
        reporting.render_thresholds_report(search, search.rules),
    )
    header, rows = reporting.candidate_rows(candidates)
    write_csv_rows(args.out / CANDIDATES_FILE_NAME, header, rows)


def cmd_detect(args: argparse.Namespace, config: DetectorConfig) -> None:
    """Detect anomalies in a series with a model bundle and its rules."""
    bundle = load(args.model)
    rules = load_rules(args.rules)
    series = _read_series(args.input, config)
    _check_bundle(args, config, bundle, series.channel_names)
    name = args.name or series.name
    run, trace = detect_series(
        bundle,
        rules,
        normalize(series, bundle.norm_bounds),
        RejectionPolicy.from_config(config.analyzer),
        config.pipeline.predict_batch,
    )
    write_atomic(args.out / detection_file_name(name), reporting.detection_json(name, run))
    write_csv_rows(args.out / trace_file_name(name), reporting.TRACE_HEADER, trace.rows(run))
    logger.info("Detected %s anomalies in %s", len(run.anomalies), name)


def cmd_evaluate(args: argparse.Namespace, config: DetectorConfig) -> None:
    """Score detected intervals against the ground truth of a series."""
    detection = reporting.read_detection(args.detected)
    truth = load_csv(args.truth)
    name = args.name or detection.name
    report = evaluate(detection.intervals, truth.anomaly_intervals, name=name)
    reporting.write_metrics(args.out / metrics_file_name(name), report)
    sys.stdout.write(reporting.render_detection_report(report))


def cmd_sweep(args: argparse.Namespace, config: DetectorConfig) -> None:
    """Train and rank one setup per sweep point, or run the whole design loop."""
    data = _read_data(args, config)
    if args.design:
        outcome = design_detector(data, config, out_dir=args.out)
        for step in outcome.steps:
            logger.info("Step %s: %s", step.iteration, step.action)
        if not outcome.satisfied:
            logger.warning("The designed detector does not meet the quality requirements")
        return
    ranked = sweep(data, config, out_dir=args.out)
    logger.info("Best setup: %s", ranked[0].params)


def cmd_features(args: argparse.Namespace, config: DetectorConfig) -> None:
    """Write the baseline feature matrix of a series for every window size."""
    series = _read_series(args.input, config)
    sizes = args.window_size or list(config.features.window_sizes)
    for size in sizes:
        matrix = window_scan(
            series,
            size,
            hop=config.features.hop,
            ctm_radius_factor=config.features.ctm_radius_factor,
        )
        write_feature_csv(matrix, args.out / f"features_{series.name}_{size}.csv")


def cmd_report(args: argparse.Namespace, config: DetectorConfig) -> None:
    """Write plot-ready tables from the artifacts of a run directory."""
    reporting.report(args.run, args.out)


COMMANDS: Dict[str, Callable[[argparse.Namespace, DetectorConfig], None]] = {
    "gen": cmd_gen,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "auto-thresholds": cmd_auto_thresholds,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "features": cmd_features,
    "report": cmd_report,
}


def _add_data_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--train", type=Path, nargs="+", required=True, help="anomaly-free training CSVs"
    )
    parser.add_argument(
        "--test", type=Path, nargs="*", default=[], help="labelled test CSVs, named by file stem"
    )


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser of every sub-command."""
    parser = argparse.ArgumentParser(
        prog="qg-detector", description="Quantized signal GRU anomaly detector."
    )
    parser.add_argument("--config", type=Path, help="INI configuration file")
    parser.add_argument("--seed", type=int, help="override every seed of the configuration")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    gen = commands.add_parser("gen", help=cmd_gen.__doc__)
    gen.add_argument("--preset", choices=["set1", "set2"], help="named step duration")

    _add_data_arguments(commands.add_parser("preprocess", help=cmd_preprocess.__doc__))

    train = commands.add_parser("train", help=cmd_train.__doc__)
    _add_data_arguments(train)
    train.add_argument("--init-from", type=Path, help="model bundle to continue training")

    thresholds = commands.add_parser("auto-thresholds", help=cmd_auto_thresholds.__doc__)
    thresholds.add_argument("--model", type=Path, required=True, help="model bundle")
    thresholds.add_argument("--train", type=Path, nargs="+", required=True)

    detect = commands.add_parser("detect", help=cmd_detect.__doc__)
    detect.add_argument("--model", type=Path, required=True, help="model bundle")
    detect.add_argument("--rules", type=Path, required=True, help="rules JSON")
    detect.add_argument("--input", type=Path, required=True, help="series CSV")
    detect.add_argument("--name", help="test set name, defaults to the file stem")

    evaluate_cmd = commands.add_parser("evaluate", help=cmd_evaluate.__doc__)
    evaluate_cmd.add_argument("--detected", type=Path, required=True, help="detection JSON")
    evaluate_cmd.add_argument("--truth", type=Path, required=True, help="labelled series CSV")
    evaluate_cmd.add_argument("--name", help="test set name, defaults to the detection name")

    sweep_cmd = commands.add_parser("sweep", help=cmd_sweep.__doc__)
    _add_data_arguments(sweep_cmd)
    sweep_cmd.add_argument(
        "--design", action="store_true", help="run the full design loop around the sweep"
    )

    features = commands.add_parser("features", help=cmd_features.__doc__)
    features.add_argument("--input", type=Path, required=True, help="series CSV")
    features.add_argument("--window-size", type=int, nargs="+", help="samples per window")

    report = commands.add_parser("report", help=cmd_report.__doc__)
    report.add_argument("--run", type=Path, required=True, help="run or sweep directory")
    return parser


def _load_config(args: argparse.Namespace) -> DetectorConfig:
    if args.config is None:
        return DetectorConfig.from_sections({}, seed=args.seed)
    return DetectorConfig.from_file(args.config, seed=args.seed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run a sub-command and return its exit code."""
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        config = _load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, config)
    except USAGE_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except DOMAIN_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_FAILURE
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":  # pragma: nocover
    sys.exit(main())
