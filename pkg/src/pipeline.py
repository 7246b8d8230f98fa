#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Detector setup life cycle: preprocess, train, select thresholds, detect and evaluate.

`run_setup` executes the initial phase of a detector design; `sweep` trains
one candidate setup per hyper-parameter combination and ranks them;
`design_detector` chains both with oversensitivity handling until the quality
requirements are met or the iteration budget runs out.
"""

import copy
import dataclasses
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

import reporting
from analyzer import (
    AnomalyCandidate,
    DetectionRun,
    RejectionPolicy,
    RuleSet,
    ThresholdSearchResult,
    apply_rules,
    auto_thresholds,
    candidate_properties,
    collect_candidates,
    save_rules,
    split_by_truth,
)
from artifacts import (
    CANDIDATES_FILE_NAME,
    MODEL_BUNDLE_FILE_NAME,
    RULES_FILE_NAME,
    SETUP_SUMMARY_FILE_NAME,
    SWEEP_TABLE_FILE_NAME,
    THRESHOLDS_REPORT_FILE_NAME,
    TRAIN_REPORT_FILE_NAME,
    detection_file_name,
    metrics_file_name,
    trace_file_name,
    write_atomic,
    write_csv_rows,
    write_json_model,
)
from detector_config import (
    SUPPORTED_THRESHOLDS,
    DetectorConfig,
    GridAlgorithm,
    PreprocessConfig,
    SelectionCriterion,
    SweepGrid,
)
from gru_model import (
    ConfigMismatchError,
    ModelBundle,
    TrainReport,
    accuracy,
    check_compatible,
    fit,
    init_model,
    parameter_count,
    predict,
    save,
)
from metrics import DetectionReport, evaluate
from quantizer import QuantizationGrid, build_grid
from signal_io import (
    Bounds,
    NormalizedSeries,
    RawSeries,
    WindowedDataset,
    build_windows,
    decimate,
    mix,
    normalize,
    shared_bounds,
    subsample,
)

logger = logging.getLogger(__name__)

PREPROCESS_AXES = ("in_grid", "out_grid", "look_back", "in_algorithm", "out_algorithm")
MODEL_AXES = ("cells", "layers")
TRAINING_AXES = ("learning_rate",)
REPORT_METRICS = ("recall", "precision", "f1", "f2")
CRITERION_PROPERTY = {
    SelectionCriterion.best_length: "length",
    SelectionCriterion.best_cum_amp: "cum_amp",
    SelectionCriterion.best_max_amp: "max_amp",
}


class PipelineError(Exception):
    """Raised when a detector setup cannot be produced."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


@dataclasses.dataclass(frozen=True)
class DetectorData:
    """Anomaly-free training series and named test series in raw units."""

    train: Tuple[RawSeries, ...]
    tests: Mapping[str, RawSeries] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if not self.train:
            raise PipelineError("At least one training series is required")
        names = self.train[0].channel_names
        for series in (*self.train, *self.tests.values()):
            if series.channel_names != names:
                raise PipelineError(
                    f"Series {series.name} has channels {series.channel_names}, expected {names}"
                )


@dataclasses.dataclass(frozen=True)
class Trace:
    """Real and predicted target classes of every predicted sample of a series."""

    target_index: np.ndarray
    real: np.ndarray
    predicted: np.ndarray

    def rows(self, run: DetectionRun) -> List[Tuple[int, int, int, int]]:
        """Return `(t, real_class, predicted_class, in_anomaly)` rows."""
        flags = np.zeros(self.target_index.size, dtype=np.int8)
        first = int(self.target_index[0]) if self.target_index.size else 0
        for start, end in run.intervals:
            flags[max(start - first, 0) : max(end - first, 0)] = 1
        return list(
            zip(
                self.target_index.tolist(),
                self.real.tolist(),
                self.predicted.tolist(),
                flags.tolist(),
            )
        )


@dataclasses.dataclass(frozen=True)
class DetectorSetup:
    """A trained detector with its rules and quality on every test set.

    Attributes:
        config: Configuration the setup was produced with.
        bundle: Trained model with its grids and normalization bounds.
        train_report: Training history.
        train_accuracy: Accuracy of the model over the full training series.
        train_candidates: False anomalies found on the training series.
        search: Automatic threshold search outcome.
        rules: Rules in force; may be stricter than the searched ones.
        runs: Detection run per test set.
        traces: Prediction trace per test set.
        reports: Detection quality per test set.
        params: Hyper-parameter values that distinguish this setup in a sweep.
    """

    config: DetectorConfig
    bundle: ModelBundle
    train_report: TrainReport
    train_accuracy: float
    train_candidates: Tuple[AnomalyCandidate, ...]
    search: ThresholdSearchResult
    rules: RuleSet
    runs: Dict[str, DetectionRun]
    traces: Dict[str, Trace]
    reports: Dict[str, DetectionReport]
    params: Dict[str, Any] = dataclasses.field(default_factory=dict)

    @property
    def parameters(self) -> int:
        """Trainable scalars of the model."""
        return parameter_count(self.bundle.model)

    @property
    def validation_accuracy(self) -> float:
        """Validation accuracy after the last epoch."""
        return self.train_report.final_validation_accuracy

    @property
    def false_maxima(self) -> Dict[str, float]:
        """Largest value of every candidate property among training false anomalies."""
        values = candidate_properties(self.train_candidates, SUPPORTED_THRESHOLDS)
        maxima = values.max(axis=0) if len(values) else np.zeros(len(SUPPORTED_THRESHOLDS))
        return {name: float(value) for name, value in zip(SUPPORTED_THRESHOLDS, maxima)}


@dataclasses.dataclass(frozen=True)
class OversensitivityOutcome:
    """Result of trying to silence false positives by raising one threshold."""

    rules: RuleSet
    escalate: bool = False
    raised: Optional[str] = None
    false_positives: int = 0


@dataclasses.dataclass(frozen=True)
class DesignStep:
    """One step of the detector design loop."""

    iteration: int
    action: str
    f1: Dict[str, float]
    satisfied: bool


@dataclasses.dataclass(frozen=True)
class DesignOutcome:
    """Best setup found by `design_detector` and how it was reached."""

    setup: DetectorSetup
    steps: Tuple[DesignStep, ...]

    @property
    def satisfied(self) -> bool:
        """Whether the final setup meets the quality requirements."""
        return self.steps[-1].satisfied


def normalize_data(
    data: DetectorData, preprocess: PreprocessConfig
) -> Tuple[Bounds, List[NormalizedSeries], Dict[str, NormalizedSeries]]:
    """Normalize every series with shared bounds.

    Bounds come from all training and test series, or from the training series
    only when `train_only_bounds` is set.
    """
    sources = list(data.train)
    if not preprocess.train_only_bounds:
        sources += list(data.tests.values())
    bounds = shared_bounds(sources)
    train = [normalize(series, bounds) for series in data.train]
    tests = {name: normalize(series, bounds) for name, series in data.tests.items()}
    return bounds, train, tests


def build_grids(
    train: Sequence[NormalizedSeries], preprocess: PreprocessConfig
) -> Tuple[Tuple[QuantizationGrid, ...], QuantizationGrid]:
    """Build one input grid per channel and the output grid from training data.

    Raises:
        PipelineError: If an algorithm is `none`; the model needs class indices.
    """
    if GridAlgorithm.none in (preprocess.in_algorithm, preprocess.out_algorithm):
        raise PipelineError("Grid algorithm `none` is not supported: the model needs classes")
    channels = np.concatenate([series.channels for series in train], axis=1)
    if preprocess.target_channel >= channels.shape[0]:
        raise PipelineError(f"Target channel {preprocess.target_channel} does not exist")
    in_grids = tuple(
        build_grid(preprocess.in_algorithm.value, preprocess.in_grid, channel)
        for channel in channels
    )
    out_grid = build_grid(
        preprocess.out_algorithm.value,
        preprocess.out_grid,
        channels[preprocess.target_channel],
    )
    logger.info(
        "Built %s %s input grids of %s classes and a %s output grid of %s classes",
        len(in_grids),
        preprocess.in_algorithm.value,
        preprocess.in_grid,
        preprocess.out_algorithm.value,
        preprocess.out_grid,
    )
    return in_grids, out_grid


def training_dataset(
    train: Sequence[NormalizedSeries],
    grids: Tuple[Sequence[QuantizationGrid], QuantizationGrid],
    preprocess: PreprocessConfig,
) -> WindowedDataset:
    """Decimate, window, mix and subsample the training series."""
    datasets = [
        build_windows(decimate(series, preprocess.decimation), grids, preprocess)
        for series in train
    ]
    dataset = subsample(mix(datasets), preprocess.samples_percentage, preprocess.seed)
    logger.info("Training dataset holds %s examples", len(dataset))
    return dataset


def predict_series(bundle: ModelBundle, series: NormalizedSeries, batch_size: int = 4096) -> Trace:
    """Predict every admissible sample of a normalized series."""
    windows = build_windows(series, (bundle.in_grids, bundle.out_grid), bundle.preprocess)
    return Trace(
        target_index=windows.target_index,
        real=windows.target_classes,
        predicted=predict(bundle.model, windows.inputs, batch_size),
    )


def series_candidates(
    trace: Trace, bundle: ModelBundle, policy: Optional[RejectionPolicy] = None
) -> List[AnomalyCandidate]:
    """Collect the candidates of a prediction trace in series sample indices."""
    offset = int(trace.target_index[0]) if trace.target_index.size else 0
    return collect_candidates(trace.predicted, trace.real, bundle.out_grid, policy, offset)


def detect_series(
    bundle: ModelBundle,
    rules: RuleSet,
    series: NormalizedSeries,
    policy: Optional[RejectionPolicy] = None,
    batch_size: int = 4096,
) -> Tuple[DetectionRun, Trace]:
    """Predict a series and confirm the candidates the rules keep."""
    trace = predict_series(bundle, series, batch_size)
    return apply_rules(series_candidates(trace, bundle, policy), rules), trace


def run_setup(
    data: DetectorData,
    config: DetectorConfig,
    out_dir: Optional[Path] = None,
    init_from: Optional[ModelBundle] = None,
) -> DetectorSetup:
    """Produce a detector setup from anomaly-free training data.

    Grids are built on the training data, the model is fit on decimated and
    subsampled windows, false anomalies of the full training series drive the
    threshold search, and every test set is detected and evaluated.

    Args:
        data: Training and test series in raw units.
        config: Detector configuration.
        out_dir: When given, every artifact of the setup is written there.
        init_from: Bundle to continue training from; its grids and normalization
            bounds are reused.

    Raises:
        PipelineError: If training data holds anomalies, grids cannot be built or the
            selected rules still confirm a training candidate.
        ConfigMismatchError: If `init_from` was trained with another preprocessing
            or model shape.
    """
    preprocess = config.preprocess
    for series in data.train:
        if series.anomaly_intervals:
            raise PipelineError(f"Training series {series.name} holds anomalies")
    if init_from is None:
        bounds, train, tests = normalize_data(data, preprocess)
        in_grids, out_grid = build_grids(train, preprocess)
        model = init_model(
            input_size=len(data.train[0].channel_names),
            cells=config.model.cells,
            layers=config.model.layers,
            out_grid=preprocess.out_grid,
            in_grid=preprocess.in_grid,
            seed=config.training.seed,
        )
    else:
        check_warm_start(init_from, config, data.train[0].channel_names)
        bounds = init_from.norm_bounds
        train = [normalize(series, bounds) for series in data.train]
        tests = {name: normalize(series, bounds) for name, series in data.tests.items()}
        in_grids, out_grid = init_from.in_grids, init_from.out_grid
        model = copy.deepcopy(init_from.model)
        logger.info("Continuing training from a model of %s parameters", parameter_count(model))
    dataset = training_dataset(train, (in_grids, out_grid), preprocess)
    train_report = fit(model, dataset, config.training)
    bundle = ModelBundle(
        model=model,
        in_grids=in_grids,
        out_grid=out_grid,
        preprocess=preprocess,
        norm_bounds=bounds,
        channel_names=data.train[0].channel_names,
    )
    policy = RejectionPolicy.from_config(config.analyzer)
    batch = config.pipeline.predict_batch
    train_traces = [predict_series(bundle, series, batch) for series in train]
    train_accuracy = accuracy(
        np.concatenate([trace.predicted for trace in train_traces]),
        np.concatenate([trace.real for trace in train_traces]),
    )
    train_candidates = tuple(
        itertools.chain.from_iterable(
            series_candidates(trace, bundle, policy) for trace in train_traces
        )
    )
    search = auto_thresholds(train_candidates, config.analyzer.thresholds)
    if apply_rules(train_candidates, search.rules).anomalies:
        raise PipelineError("Selected rules still confirm anomalies on the training data")
    runs: Dict[str, DetectionRun] = {}
    traces: Dict[str, Trace] = {}
    for name, series in tests.items():
        runs[name], traces[name] = detect_series(bundle, search.rules, series, policy, batch)
    setup = DetectorSetup(
        config=config,
        bundle=bundle,
        train_report=train_report,
        train_accuracy=train_accuracy,
        train_candidates=train_candidates,
        search=search,
        rules=search.rules,
        runs=runs,
        traces=traces,
        reports=_evaluate_runs(runs, tests),
    )
    if out_dir is not None:
        persist_setup(setup, out_dir)
    return setup


def check_warm_start(
    bundle: ModelBundle, config: DetectorConfig, channel_names: Sequence[str]
) -> None:
    """Refuse to continue training a bundle under another preprocessing or shape.

    Raises:
        ConfigMismatchError: Naming every key that differs.
    """
    mismatched: List[str] = []
    try:
        check_compatible(bundle, config.preprocess, channel_names)
    except ConfigMismatchError as exc:
        mismatched += exc.keys
    if len(bundle.model.layers) != config.model.layers:
        mismatched.append("layers")
    if any(cell.hidden_size != config.model.cells for cell in bundle.model.layers):
        mismatched.append("cells")
    if mismatched:
        raise ConfigMismatchError(mismatched)


def _evaluate_runs(
    runs: Mapping[str, DetectionRun], tests: Mapping[str, RawSeries]
) -> Dict[str, DetectionReport]:
    return {
        name: evaluate(run.intervals, tests[name].anomaly_intervals, name=name)
        for name, run in runs.items()
    }


def with_rules(setup: DetectorSetup, rules: RuleSet) -> DetectorSetup:
    """Return the setup re-filtered and re-evaluated under other rules."""
    runs = {name: apply_rules(run.candidates, rules) for name, run in setup.runs.items()}
    reports = {
        name: evaluate(runs[name].intervals, report.truth, name=name)
        for name, report in setup.reports.items()
    }
    return dataclasses.replace(setup, rules=rules, runs=runs, reports=reports)


def raise_for_false_positives(
    rules: RuleSet,
    true_positives: Sequence[AnomalyCandidate],
    false_positives: Sequence[AnomalyCandidate],
    bins: Optional[Mapping[str, np.ndarray]] = None,
    properties: Sequence[str] = SUPPORTED_THRESHOLDS,
) -> OversensitivityOutcome:
    """Raise the threshold of a property that separates real from false anomalies.

    A property separates them when its smallest true-positive value is strictly
    above its largest false-positive value. The property with the widest
    normalized gap wins and its threshold moves to the smallest bin boundary in
    `[max_fp, min_tp)`, or to `max_fp` when no boundary falls in that range.
    Without a separating property, or without any true positive, the outcome
    asks for escalation.
    """
    if not false_positives:
        return OversensitivityOutcome(rules=rules)
    if not true_positives:
        return OversensitivityOutcome(
            rules=rules, escalate=True, false_positives=len(false_positives)
        )
    tp_values = candidate_properties(true_positives, properties)
    fp_values = candidate_properties(false_positives, properties)
    best: Optional[Tuple[float, str, float, float]] = None
    for axis, name in enumerate(properties):
        min_tp, max_fp = float(tp_values[:, axis].min()), float(fp_values[:, axis].max())
        if min_tp <= max_fp:
            continue
        gap = (min_tp - max_fp) / min_tp
        if best is None or gap > best[0]:
            best = (gap, name, min_tp, max_fp)
    if best is None:
        logger.info("No property separates %s false positives", len(false_positives))
        return OversensitivityOutcome(
            rules=rules, escalate=True, false_positives=len(false_positives)
        )
    _, name, min_tp, max_fp = best
    boundaries = np.asarray(bins.get(name, ()) if bins else (), dtype=np.float64)
    usable = boundaries[(boundaries >= max_fp) & (boundaries < min_tp)]
    threshold = float(usable.min()) if usable.size else max_fp
    threshold = max(threshold, rules.thresholds.get(name, 0.0))
    logger.info(
        "Raising %s threshold to %s to filter %s false positives",
        name,
        threshold,
        len(false_positives),
    )
    return OversensitivityOutcome(
        rules=rules.raised(name, threshold),
        raised=name,
        false_positives=len(false_positives),
    )


def handle_oversensitivity(
    setup: DetectorSetup, reports: Optional[Mapping[str, DetectionReport]] = None
) -> OversensitivityOutcome:
    """Try to silence the false positives of every test set with stricter rules."""
    reports = setup.reports if reports is None else reports
    true_positives: List[AnomalyCandidate] = []
    false_positives: List[AnomalyCandidate] = []
    for name, run in setup.runs.items():
        if name not in reports:
            continue
        hits, misses = split_by_truth(run.anomalies, reports[name].truth)
        true_positives += hits
        false_positives += misses
    return raise_for_false_positives(
        setup.rules, true_positives, false_positives, setup.search.threshold_candidates
    )


def meets_requirements(setup: DetectorSetup, config: Optional[DetectorConfig] = None) -> bool:
    """Whether every test set reaches the minimum F1 and F2 of `[pipeline]`."""
    requirements = (config or setup.config).pipeline
    return all(
        report.f1 >= requirements.min_f1 and report.f2 >= requirements.min_f2
        for report in setup.reports.values()
    )


def criterion_value(setup: DetectorSetup, criterion: SelectionCriterion) -> float:
    """Return the scalar a criterion ranks by; lower is better.

    `balanced` has no scalar of its own and is ranked by `rank_setups`.
    """
    if criterion == SelectionCriterion.best_accuracy:
        return -setup.validation_accuracy
    if criterion in CRITERION_PROPERTY:
        return setup.false_maxima[CRITERION_PROPERTY[criterion]]
    raise PipelineError(f"Criterion {criterion.value} has no scalar value")


def _ranks(values: Sequence[float]) -> List[int]:
    ordered = sorted(set(values))
    return [ordered.index(value) for value in values]


def rank_setups(
    setups: Sequence[DetectorSetup], criterion: SelectionCriterion
) -> List[DetectorSetup]:
    """Sort setups best first.

    `balanced` sums the ranks of a setup under the four single criteria. Ties
    go to the setup with fewer parameters, then to the earlier one.
    """
    if criterion == SelectionCriterion.balanced:
        keys: List[float] = [0.0] * len(setups)
        for single in (*CRITERION_PROPERTY, SelectionCriterion.best_accuracy):
            for index, rank in enumerate(_ranks([criterion_value(s, single) for s in setups])):
                keys[index] += rank
    else:
        keys = [criterion_value(setup, criterion) for setup in setups]
    order = sorted(range(len(setups)), key=lambda i: (keys[i], setups[i].parameters, i))
    return [setups[i] for i in order]


def sweep_points(grid: SweepGrid) -> List[Dict[str, Any]]:
    """Return the cartesian product of the non-empty sweep axes in grid order.

    Raises:
        PipelineError: If every axis is empty.
    """
    axes = grid.axes()
    if not axes:
        raise PipelineError("The sweep grid has no values")
    names = list(axes)
    return [dict(zip(names, values)) for values in itertools.product(*axes.values())]


def candidate_config(config: DetectorConfig, point: Mapping[str, Any]) -> DetectorConfig:
    """Return the configuration of a sweep point.

    Raises:
        PipelineError: If the overridden sections are not valid.
    """
    sections = {
        "preprocess": (config.preprocess, PREPROCESS_AXES),
        "model": (config.model, MODEL_AXES),
        "training": (config.training, TRAINING_AXES),
    }
    updates = {}
    for section, (current, axes) in sections.items():
        overrides = {key: point[key] for key in axes if key in point}
        if not overrides:
            continue
        try:
            updates[section] = type(current)(**{**current.model_dump(), **overrides})
        except ValidationError as exc:
            raise PipelineError(f"Sweep point {dict(point)} is not valid: {exc}") from exc
    return dataclasses.replace(config, **updates)


def _sweep_task(task: Tuple[DetectorData, DetectorConfig, Dict[str, Any]]) -> DetectorSetup:
    data, config, point = task
    setup = run_setup(data, candidate_config(config, point))
    return dataclasses.replace(setup, params=dict(point))


def sweep(
    data: DetectorData,
    config: DetectorConfig,
    grid: Optional[SweepGrid] = None,
    criterion: Optional[SelectionCriterion] = None,
    out_dir: Optional[Path] = None,
) -> List[DetectorSetup]:
    """Train one setup per sweep point and rank them.

    Candidates run in a process pool when `[pipeline] workers` is above one;
    results are gathered in grid order before ranking.
    """
    grid = grid or config.sweep
    criterion = criterion or config.pipeline.criterion
    points = sweep_points(grid)
    tasks = [(data, config, point) for point in points]
    workers = config.pipeline.workers
    logger.info("Sweeping %s candidate setups with %s workers", len(points), workers)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            setups = list(executor.map(_sweep_task, tasks))
    else:
        setups = [_sweep_task(task) for task in tasks]
    ranked = rank_setups(setups, criterion)
    if out_dir is not None:
        for index, setup in enumerate(setups):
            persist_setup(setup, Path(out_dir) / f"candidate_{index:03d}")
        header, rows = sweep_table(ranked, setups, list(grid.axes()))
        write_csv_rows(Path(out_dir) / SWEEP_TABLE_FILE_NAME, header, rows)
    best = ranked[0]
    logger.info("Best setup under %s: %s", criterion.value, best.params)
    return ranked


def sweep_table(
    ranked: Sequence[DetectorSetup], setups: Sequence[DetectorSetup], axes: Sequence[str]
) -> Tuple[List[str], List[List[Any]]]:
    """Return a comparison table with one row per setup, best first."""
    test_sets = sorted({name for setup in setups for name in setup.reports})
    header = [
        "rank",
        "candidate",
        *axes,
        "parameters",
        "train_accuracy",
        "validation_accuracy",
        *(f"false_max_{name}" for name in SUPPORTED_THRESHOLDS),
        *(f"threshold_{name}" for name in SUPPORTED_THRESHOLDS),
        "saved_area",
        *(f"{name}.{metric}" for name in test_sets for metric in REPORT_METRICS),
    ]
    rows = []
    positions = {id(setup): index for index, setup in enumerate(setups)}
    for rank, setup in enumerate(ranked, start=1):
        maxima = setup.false_maxima
        row: List[Any] = [rank, f"candidate_{positions[id(setup)]:03d}"]
        row += [_cell(setup.params.get(axis, "")) for axis in axes]
        row += [setup.parameters, f"{setup.train_accuracy:.4f}"]
        row.append(f"{setup.validation_accuracy:.4f}")
        row += [f"{maxima[name]:.6g}" for name in SUPPORTED_THRESHOLDS]
        row += [f"{setup.rules.thresholds.get(name, 0.0):.6g}" for name in SUPPORTED_THRESHOLDS]
        row.append(f"{setup.search.saved_area:.4f}")
        for name in test_sets:
            report = setup.reports.get(name)
            row += (
                [f"{getattr(report, metric):.4f}" for metric in REPORT_METRICS]
                if report
                else ["", "", "", ""]
            )
        rows.append(row)
    return header, rows


def _cell(value: Any) -> Any:
    return getattr(value, "value", value)


def design_detector(
    data: DetectorData, config: DetectorConfig, out_dir: Optional[Path] = None
) -> DesignOutcome:
    """Design a detector meeting the `[pipeline]` quality requirements.

    Starts from `run_setup`, then alternates stricter thresholds for
    oversensitive setups and a single candidate sweep, for at most
    `max_iterations` steps after the initial one.
    """
    setup = run_setup(data, config)
    steps = [_step(0, "initial setup", setup)]
    swept = False
    for iteration in range(1, config.pipeline.max_iterations + 1):
        if meets_requirements(setup):
            break
        outcome = handle_oversensitivity(setup)
        if outcome.raised and not outcome.escalate:
            setup = with_rules(setup, outcome.rules)
            steps.append(_step(iteration, f"raised {outcome.raised} threshold", setup))
            continue
        if swept or not config.sweep.axes():
            break
        swept = True
        ranked = sweep(data, config)
        winner = rank_setups([setup, ranked[0]], config.pipeline.criterion)[0]
        action = "kept setup after sweep" if winner is setup else "selected swept setup"
        setup = winner
        steps.append(_step(iteration, action, setup))
    if out_dir is not None:
        persist_setup(setup, out_dir)
    if not steps[-1].satisfied:
        logger.warning("Quality requirements not met after %s steps", len(steps))
    return DesignOutcome(setup=setup, steps=tuple(steps))


def _step(iteration: int, action: str, setup: DetectorSetup) -> DesignStep:
    step = DesignStep(
        iteration=iteration,
        action=action,
        f1={name: report.f1 for name, report in setup.reports.items()},
        satisfied=meets_requirements(setup),
    )
    logger.info("Design step %s: %s, F1 %s", iteration, action, step.f1)
    return step


def persist_setup(setup: DetectorSetup, out_dir: Path) -> None:
    """Write every artifact of a setup into a run directory."""
    out_dir = Path(out_dir)
    save(setup.bundle, out_dir / MODEL_BUNDLE_FILE_NAME)
    save_rules(setup.rules, out_dir / RULES_FILE_NAME)
    write_json_model(out_dir / TRAIN_REPORT_FILE_NAME, setup.train_report)
    write_atomic(
        out_dir / THRESHOLDS_REPORT_FILE_NAME,
        reporting.render_thresholds_report(setup.search, setup.rules),
    )
    header, rows = reporting.candidate_rows(setup.train_candidates)
    write_csv_rows(out_dir / CANDIDATES_FILE_NAME, header, rows)
    for name, run in setup.runs.items():
        report = setup.reports[name]
        write_atomic(out_dir / detection_file_name(name), reporting.detection_json(name, run))
        reporting.write_metrics(out_dir / metrics_file_name(name), report)
        write_csv_rows(
            out_dir / trace_file_name(name), reporting.TRACE_HEADER, setup.traces[name].rows(run)
        )
    write_atomic(out_dir / SETUP_SUMMARY_FILE_NAME, reporting.setup_summary_json(setup))
    logger.info("Persisted detector setup to %s", out_dir)
