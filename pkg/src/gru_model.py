#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""GRU sequence classifier written against numpy.

The classifier stacks one or more GRU layers over a window of quantized class
indices and maps the final hidden state of the last layer to `out_grid` class
probabilities through a dense softmax head. Training minimizes the mean
categorical cross-entropy with backpropagation through time.
"""

import copy
import dataclasses
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from artifacts import write_json_model
from detector_config import Optimizer, PreprocessConfig, TrainingConfig
from quantizer import GridRecord, QuantizationGrid, QuantizerError, from_record, to_record
from signal_io import WindowedDataset

logger = logging.getLogger(__name__)

BUNDLE_FORMAT_VERSION = 1
GATE_PARAMETERS = ("w_zx", "w_zh", "b_z", "w_rx", "w_rh", "b_r", "w_hx", "w_hh", "b_h")
ADAM_BETA_1 = 0.9
ADAM_BETA_2 = 0.999
ADAM_EPSILON = 1e-8


class GruModelError(Exception):
    """Raised when the classifier cannot run on the given data."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class TrainingDivergedError(GruModelError):
    """Raised when the training loss or the weights stop being finite."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"Training diverged in epoch {epoch}: loss is not finite")


class BundleFormatError(GruModelError):
    """Raised when a model bundle cannot be read."""


class ConfigMismatchError(GruModelError):
    """Raised when data was preprocessed differently from what a model was trained on."""

    def __init__(self, keys: Sequence[str]):
        self.keys = list(keys)
        super().__init__(
            f"Configuration does not match the model bundle: {', '.join(self.keys)}"
        )


@dataclasses.dataclass
class GruCell:
    """Weights of a single GRU layer.

    Input weights have shape (hidden, input), recurrent weights (hidden, hidden)
    and biases (hidden,).
    """

    w_zx: np.ndarray
    w_zh: np.ndarray
    b_z: np.ndarray
    w_rx: np.ndarray
    w_rh: np.ndarray
    b_r: np.ndarray
    w_hx: np.ndarray
    w_hh: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        hidden, inputs = self.w_zx.shape
        for name in GATE_PARAMETERS:
            value = getattr(self, name)
            expected: Tuple[int, ...]
            if name.startswith("b_"):
                expected = (hidden,)
            elif name.endswith("x"):
                expected = (hidden, inputs)
            else:
                expected = (hidden, hidden)
            if value.shape != expected:
                raise GruModelError(f"{name} has shape {value.shape}, expected {expected}")
            if not np.all(np.isfinite(value)):
                raise GruModelError(f"{name} holds non-finite values")

    @property
    def input_size(self) -> int:
        """Width of the per-step input vector."""
        return int(self.w_zx.shape[1])

    @property
    def hidden_size(self) -> int:
        """Number of cells."""
        return int(self.w_zx.shape[0])


@dataclasses.dataclass
class GruClassifier:
    """Stacked GRU layers followed by a dense softmax head.

    Attributes:
        layers: GRU layers, the first one reading the scaled input channels.
        dense_w: Head weights of shape (out_grid, cells).
        dense_b: Head biases of shape (out_grid,).
        in_grid: Number of input classes; inputs are scaled by `1 / (in_grid - 1)`.
    """

    layers: List[GruCell]
    dense_w: np.ndarray
    dense_b: np.ndarray
    in_grid: int

    def __post_init__(self):
        if not self.layers:
            raise GruModelError("A classifier needs at least one GRU layer")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.input_size != lower.hidden_size:
                raise GruModelError("Layer input sizes do not chain")
        if self.dense_w.shape != (self.dense_b.shape[0], self.layers[-1].hidden_size):
            raise GruModelError("Dense head does not match the last layer")
        if self.in_grid < 2:
            raise GruModelError("in_grid must be at least 2")

    @property
    def input_size(self) -> int:
        """Number of input channels."""
        return self.layers[0].input_size

    @property
    def out_grid(self) -> int:
        """Number of output classes."""
        return int(self.dense_b.shape[0])

    def parameters(self) -> Dict[str, np.ndarray]:
        """Return every trainable array by name; updating them updates the model."""
        params: Dict[str, np.ndarray] = {}
        for index, cell in enumerate(self.layers):
            for name in GATE_PARAMETERS:
                params[f"layer{index}.{name}"] = getattr(cell, name)
        params["dense_w"] = self.dense_w
        params["dense_b"] = self.dense_b
        return params


@dataclasses.dataclass(frozen=True)
class StepCache:
    """Intermediates of one cell step kept for backpropagation."""

    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    hc: np.ndarray
    h: np.ndarray
    a_z: np.ndarray
    a_r: np.ndarray
    a_h: np.ndarray


class TrainReport(BaseModel):
    """Per-epoch training history."""

    model_config = ConfigDict(frozen=True)

    train_loss: List[float]
    train_accuracy: List[float]
    validation_accuracy: List[float]
    epochs_run: int = Field(ge=0)
    seed: int
    optimizer: Optimizer
    learning_rate: float
    validation_size: int = Field(ge=0)

    @model_validator(mode="after")
    def validate_lengths(self) -> "TrainReport":
        """Validate that every history holds one value per epoch."""
        lengths = {len(self.train_loss), len(self.train_accuracy), len(self.validation_accuracy)}
        if lengths != {self.epochs_run}:
            raise ValueError("history lengths must equal epochs_run")
        return self

    @property
    def final_validation_accuracy(self) -> float:
        """Validation accuracy after the last epoch."""
        return self.validation_accuracy[-1] if self.validation_accuracy else 0.0


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_cell(input_size: int, hidden_size: int, rng: np.random.Generator) -> GruCell:
    """Return a cell with weights uniform in `±sqrt(1 / fan_in)` and zero biases."""
    weights = {}
    for gate in ("z", "r", "h"):
        weights[f"w_{gate}x"] = _uniform(rng, (hidden_size, input_size), input_size)
        weights[f"w_{gate}h"] = _uniform(rng, (hidden_size, hidden_size), hidden_size)
        weights[f"b_{gate}"] = np.zeros(hidden_size)
    return GruCell(**weights)


def init_model(
    input_size: int,
    cells: int,
    layers: int,
    out_grid: int,
    in_grid: int,
    seed: int = 0,
) -> GruClassifier:
    """Return a freshly initialized classifier, deterministic under `seed`."""
    if min(input_size, cells, layers) < 1 or out_grid < 2:
        raise GruModelError("Model dimensions must be positive and out_grid at least 2")
    rng = np.random.default_rng(seed)
    stack = []
    width = input_size
    for _ in range(layers):
        stack.append(init_cell(width, cells, rng))
        width = cells
    return GruClassifier(
        layers=stack,
        dense_w=_uniform(rng, (out_grid, cells), cells),
        dense_b=np.zeros(out_grid),
        in_grid=in_grid,
    )


def parameter_count(model: GruClassifier) -> int:
    """Return the number of trainable scalars."""
    return int(sum(value.size for value in model.parameters().values()))


def cell_step(cell: GruCell, x: np.ndarray, h_prev: np.ndarray) -> Tuple[np.ndarray, StepCache]:
    """Advance one time step.

    Works on a single vector or on a batch of row vectors.

    Returns:
        The new hidden state and the intermediates needed for backpropagation.
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape[-1] != cell.input_size or h_prev.shape[-1] != cell.hidden_size:
        raise GruModelError(
            f"Cell expects input {cell.input_size} and state {cell.hidden_size}, "
            f"got {x.shape[-1]} and {h_prev.shape[-1]}"
        )
    a_z = x @ cell.w_zx.T + h_prev @ cell.w_zh.T + cell.b_z
    a_r = x @ cell.w_rx.T + h_prev @ cell.w_rh.T + cell.b_r
    z = _sigmoid(a_z)
    r = _sigmoid(a_r)
    a_h = x @ cell.w_hx.T + (r * h_prev) @ cell.w_hh.T + cell.b_h
    hc = np.tanh(a_h)
    h = (1.0 - z) * h_prev + z * hc
    return h, StepCache(x=x, h_prev=h_prev, z=z, r=r, hc=hc, h=h, a_z=a_z, a_r=a_r, a_h=a_h)


def _scale_inputs(model: GruClassifier, windows: np.ndarray) -> np.ndarray:
    windows = np.asarray(windows)
    if windows.ndim != 3 or windows.shape[2] != model.input_size:
        raise GruModelError(
            f"Expected windows of shape (n, look_back, {model.input_size}), got {windows.shape}"
        )
    if windows.size and (windows.min() < 0 or windows.max() >= model.in_grid):
        raise GruModelError(f"Input classes must lie in [0, {model.in_grid})")
    return windows.astype(np.float64) / (model.in_grid - 1)


def _run_layers(
    model: GruClassifier, x_seq: np.ndarray
) -> Tuple[np.ndarray, List[List[StepCache]]]:
    batch = x_seq.shape[0]
    sequence = [x_seq[:, t, :] for t in range(x_seq.shape[1])]
    caches: List[List[StepCache]] = []
    for cell in model.layers:
        h = np.zeros((batch, cell.hidden_size))
        layer_caches = []
        outputs = []
        for x in sequence:
            h, cache = cell_step(cell, x, h)
            layer_caches.append(cache)
            outputs.append(h)
        caches.append(layer_caches)
        sequence = outputs
    return sequence[-1], caches


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(model: GruClassifier, window: np.ndarray) -> np.ndarray:
    """Return the class probabilities for a single (look_back, channels) window."""
    window = np.asarray(window)
    if window.ndim != 2:
        raise GruModelError(f"Expected a (look_back, channels) window, got {window.shape}")
    return predict_proba(model, window[None, :, :])[0]


def predict_proba(model: GruClassifier, windows: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Return class probabilities for every window, evaluated in chunks."""
    windows = np.asarray(windows)
    _scale_inputs(model, windows[:0] if windows.ndim == 3 else windows)
    outputs = []
    for start in range(0, len(windows), batch_size):
        x_seq = _scale_inputs(model, windows[start : start + batch_size])
        h_last, _ = _run_layers(model, x_seq)
        logits = h_last @ model.dense_w.T + model.dense_b
        outputs.append(np.exp(_log_softmax(logits)))
    if not outputs:
        return np.zeros((0, model.out_grid))
    return np.concatenate(outputs)


def predict(model: GruClassifier, windows: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Return the most probable class of every window."""
    return np.argmax(predict_proba(model, windows, batch_size), axis=1)


def accuracy(predictions: Sequence[int], truth: Sequence[int]) -> float:
    """Return the share of positions where the prediction equals the truth."""
    predicted = np.asarray(predictions)
    real = np.asarray(truth)
    if predicted.shape != real.shape:
        raise GruModelError("Predictions and truth must have the same length")
    if predicted.size == 0:
        raise GruModelError("Accuracy of an empty prediction set is undefined")
    return float(np.count_nonzero(predicted == real) / predicted.size)


def _backward(
    model: GruClassifier, caches: List[List[StepCache]], dlogits: np.ndarray
) -> Dict[str, np.ndarray]:
    grads = {name: np.zeros_like(value) for name, value in model.parameters().items()}
    h_last = caches[-1][-1].h
    grads["dense_w"] = dlogits.T @ h_last
    grads["dense_b"] = dlogits.sum(axis=0)
    steps = len(caches[-1])
    d_outputs = [np.zeros_like(cache.h) for cache in caches[-1]]
    d_outputs[-1] = dlogits @ model.dense_w
    for index in reversed(range(len(model.layers))):
        cell = model.layers[index]
        prefix = f"layer{index}."
        d_inputs: List[np.ndarray] = [np.empty(0)] * steps
        dh_next = np.zeros_like(d_outputs[-1])
        for t in reversed(range(steps)):
            cache = caches[index][t]
            dh = d_outputs[t] + dh_next
            dz = dh * (cache.hc - cache.h_prev)
            dhc = dh * cache.z
            dh_prev = dh * (1.0 - cache.z)
            da_h = dhc * (1.0 - cache.hc**2)
            d_rh = da_h @ cell.w_hh
            dr = d_rh * cache.h_prev
            dh_prev += d_rh * cache.r
            da_r = dr * cache.r * (1.0 - cache.r)
            da_z = dz * cache.z * (1.0 - cache.z)
            dh_prev += da_r @ cell.w_rh + da_z @ cell.w_zh
            d_inputs[t] = da_z @ cell.w_zx + da_r @ cell.w_rx + da_h @ cell.w_hx
            grads[prefix + "w_zx"] += da_z.T @ cache.x
            grads[prefix + "w_zh"] += da_z.T @ cache.h_prev
            grads[prefix + "b_z"] += da_z.sum(axis=0)
            grads[prefix + "w_rx"] += da_r.T @ cache.x
            grads[prefix + "w_rh"] += da_r.T @ cache.h_prev
            grads[prefix + "b_r"] += da_r.sum(axis=0)
            grads[prefix + "w_hx"] += da_h.T @ cache.x
            grads[prefix + "w_hh"] += da_h.T @ (cache.r * cache.h_prev)
            grads[prefix + "b_h"] += da_h.sum(axis=0)
            dh_next = dh_prev
        d_outputs = d_inputs
    return grads


def _loss_and_gradients(
    model: GruClassifier, windows: np.ndarray, targets: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
    x_seq = _scale_inputs(model, windows)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (x_seq.shape[0], model.out_grid):
        raise GruModelError(f"Targets must have shape ({x_seq.shape[0]}, {model.out_grid})")
    h_last, caches = _run_layers(model, x_seq)
    log_p = _log_softmax(h_last @ model.dense_w.T + model.dense_b)
    probs = np.exp(log_p)
    loss = float(-np.sum(targets * log_p) / x_seq.shape[0])
    grads = _backward(model, caches, (probs - targets) / x_seq.shape[0])
    return loss, grads, probs


def loss_and_gradients(
    model: GruClassifier, windows: np.ndarray, targets: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Return the mean cross-entropy of a batch and its gradient for every parameter.

    Args:
        model: Classifier to differentiate.
        windows: Class indices of shape (batch, look_back, channels).
        targets: One-hot rows of shape (batch, out_grid).
    """
    loss, grads, _ = _loss_and_gradients(model, windows, targets)
    return loss, grads


def _loss(model: GruClassifier, windows: np.ndarray, targets: np.ndarray) -> float:
    h_last, _ = _run_layers(model, _scale_inputs(model, windows))
    log_p = _log_softmax(h_last @ model.dense_w.T + model.dense_b)
    return float(-np.sum(targets * log_p) / windows.shape[0])


def gradient_check(
    model: GruClassifier, window: np.ndarray, target: np.ndarray, epsilon: float = 1e-5
) -> float:
    """Compare analytic gradients with central finite differences.

    Every scalar parameter is perturbed by `±epsilon` on a private copy of the
    model. The relative error of a parameter is `|a - n| / max(|a| + |n|, 1e-6)`.

    Returns:
        The maximum relative error over all parameters.

    Raises:
        GruModelError: If `epsilon` is not positive.
    """
    if not epsilon > 0.0:
        raise GruModelError(f"epsilon must be positive, got {epsilon}")
    probe = copy.deepcopy(model)
    windows = np.asarray(window)[None, :, :]
    targets = np.asarray(target, dtype=np.float64)[None, :]
    _, analytic = loss_and_gradients(probe, windows, targets)
    worst = 0.0
    for name, param in probe.parameters().items():
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + epsilon
            loss_plus = _loss(probe, windows, targets)
            param[index] = original - epsilon
            loss_minus = _loss(probe, windows, targets)
            param[index] = original
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            exact = analytic[name][index]
            error = abs(exact - numeric) / max(abs(exact) + abs(numeric), 1e-6)
            worst = max(worst, float(error))
    logger.debug("Gradient check max relative error %.3e", worst)
    return worst


class _Sgd:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        for name, param in params.items():
            param -= self.learning_rate * grads[name]


class _Adam:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate
        self.steps = 0
        self.first: Dict[str, np.ndarray] = {}
        self.second: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.steps += 1
        correction_1 = 1.0 - ADAM_BETA_1**self.steps
        correction_2 = 1.0 - ADAM_BETA_2**self.steps
        for name, param in params.items():
            grad = grads[name]
            first = self.first.setdefault(name, np.zeros_like(param))
            second = self.second.setdefault(name, np.zeros_like(param))
            first *= ADAM_BETA_1
            first += (1.0 - ADAM_BETA_1) * grad
            second *= ADAM_BETA_2
            second += (1.0 - ADAM_BETA_2) * grad**2
            param -= (
                self.learning_rate
                * (first / correction_1)
                / (np.sqrt(second / correction_2) + ADAM_EPSILON)
            )


def _optimizer(hyper: TrainingConfig) -> Union[_Sgd, _Adam]:
    if hyper.optimizer == Optimizer.adam:
        return _Adam(hyper.learning_rate)
    return _Sgd(hyper.learning_rate)


def fit(model: GruClassifier, data: WindowedDataset, hyper: TrainingConfig) -> TrainReport:
    """Train the classifier in place with mini-batch gradient descent.

    A seeded permutation holds out `validation_fraction` of the examples; the
    remaining ones are reshuffled every epoch. Training accuracy and loss are
    averaged over the batches of an epoch; validation accuracy is measured
    after the epoch. Without a validation split the training accuracy is
    reported in its place.

    Raises:
        GruModelError: If the dataset is empty or does not match the model.
        TrainingDivergedError: If the loss or the weights stop being finite.
    """
    total = len(data)
    if total == 0:
        raise GruModelError("Cannot train on an empty dataset")
    if data.config.in_grid != model.in_grid or data.config.out_grid != model.out_grid:
        raise GruModelError("Dataset grids do not match the model")
    rng = np.random.default_rng(hyper.seed)
    order = rng.permutation(total)
    validation_size = min(int(np.floor(hyper.validation_fraction * total + 0.5)), total - 1)
    validation_idx = np.sort(order[:validation_size])
    train_idx = order[validation_size:]
    optimizer = _optimizer(hyper)
    params = model.parameters()
    history: Dict[str, List[float]] = {"loss": [], "train": [], "validation": []}
    for epoch in range(1, hyper.epochs + 1):
        shuffled = rng.permutation(train_idx)
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(shuffled), hyper.batch_size):
            batch = shuffled[start : start + hyper.batch_size]
            targets = data.targets[batch]
            loss, grads, probs = _loss_and_gradients(model, data.inputs[batch], targets)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            optimizer.step(params, grads)
            loss_sum += loss * len(batch)
            correct += int(np.count_nonzero(probs.argmax(axis=1) == targets.argmax(axis=1)))
        if not all(np.all(np.isfinite(value)) for value in params.values()):
            raise TrainingDivergedError(epoch)
        train_accuracy = correct / len(shuffled)
        if validation_size:
            validation_accuracy = accuracy(
                predict(model, data.inputs[validation_idx]),
                data.target_classes[validation_idx],
            )
        else:
            validation_accuracy = train_accuracy
        history["loss"].append(loss_sum / len(shuffled))
        history["train"].append(train_accuracy)
        history["validation"].append(validation_accuracy)
        logger.info(
            "Epoch %s/%s: loss %.4f, accuracy %.4f, validation accuracy %.4f",
            epoch,
            hyper.epochs,
            history["loss"][-1],
            train_accuracy,
            validation_accuracy,
        )
    return TrainReport(
        train_loss=history["loss"],
        train_accuracy=history["train"],
        validation_accuracy=history["validation"],
        epochs_run=hyper.epochs,
        seed=hyper.seed,
        optimizer=hyper.optimizer,
        learning_rate=hyper.learning_rate,
        validation_size=validation_size,
    )


class WeightRecord(BaseModel):
    """A weight array with an explicit shape header."""

    model_config = ConfigDict(frozen=True)

    shape: List[int]
    data: List[float]


class ModelBundleRecord(BaseModel):
    """On-disk form of a trained detector model."""

    model_config = ConfigDict(frozen=True)

    format_version: int
    preprocess: PreprocessConfig
    channel_names: List[str]
    norm_bounds: List[Tuple[float, float]]
    in_grids: List[GridRecord]
    out_grid: GridRecord
    model_in_grid: int = Field(ge=2)
    layer_sizes: List[Tuple[int, int]]
    weights: Dict[str, WeightRecord]


@dataclasses.dataclass(frozen=True)
class ModelBundle:
    """A trained classifier together with everything needed to feed it data.

    Attributes:
        model: The classifier.
        in_grids: Input grid of every channel.
        out_grid: Grid of the predicted target channel.
        preprocess: Preprocessing options the model was trained with.
        norm_bounds: Per-channel normalization bounds of the training data.
        channel_names: Channel names of the training data.
    """

    model: GruClassifier
    in_grids: Tuple[QuantizationGrid, ...]
    out_grid: QuantizationGrid
    preprocess: PreprocessConfig
    norm_bounds: Tuple[Tuple[float, float], ...] = ()
    channel_names: Tuple[str, ...] = ()


def _weight_record(value: np.ndarray) -> WeightRecord:
    return WeightRecord(shape=list(value.shape), data=[float(item) for item in value.ravel()])


def _weight_array(record: WeightRecord) -> np.ndarray:
    data = np.array(record.data, dtype=np.float64)
    if data.size != int(np.prod(record.shape)):
        raise BundleFormatError(f"Weight data of size {data.size} does not fit {record.shape}")
    return data.reshape(record.shape)


def save(bundle: ModelBundle, path: Path) -> None:
    """Write a model bundle as a single self-describing JSON document."""
    model = bundle.model
    record = ModelBundleRecord(
        format_version=BUNDLE_FORMAT_VERSION,
        preprocess=bundle.preprocess,
        channel_names=list(bundle.channel_names),
        norm_bounds=[tuple(bounds) for bounds in bundle.norm_bounds],
        in_grids=[to_record(grid) for grid in bundle.in_grids],
        out_grid=to_record(bundle.out_grid),
        model_in_grid=model.in_grid,
        layer_sizes=[(cell.input_size, cell.hidden_size) for cell in model.layers],
        weights={name: _weight_record(value) for name, value in model.parameters().items()},
    )
    write_json_model(path, record)
    logger.info("Saved model bundle to %s (%s parameters)", path, parameter_count(model))


def load(path: Path) -> ModelBundle:
    """Read a model bundle written by `save`.

    Raises:
        BundleFormatError: If the file is missing, truncated, malformed or of another version.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise BundleFormatError(f"Could not read model bundle {path}: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("format_version") != BUNDLE_FORMAT_VERSION:
        found = raw.get("format_version") if isinstance(raw, dict) else None
        raise BundleFormatError(
            f"Unsupported model bundle version {found}, expected {BUNDLE_FORMAT_VERSION}"
        )
    try:
        record = ModelBundleRecord.model_validate(raw)
        layers = []
        for index, _ in enumerate(record.layer_sizes):
            layers.append(
                GruCell(
                    **{
                        name: _weight_array(record.weights[f"layer{index}.{name}"])
                        for name in GATE_PARAMETERS
                    }
                )
            )
        model = GruClassifier(
            layers=layers,
            dense_w=_weight_array(record.weights["dense_w"]),
            dense_b=_weight_array(record.weights["dense_b"]),
            in_grid=record.model_in_grid,
        )
        bundle = ModelBundle(
            model=model,
            in_grids=tuple(from_record(grid) for grid in record.in_grids),
            out_grid=from_record(record.out_grid),
            preprocess=record.preprocess,
            norm_bounds=tuple((lo, hi) for lo, hi in record.norm_bounds),
            channel_names=tuple(record.channel_names),
        )
    except (ValidationError, KeyError, GruModelError, QuantizerError) as exc:
        if isinstance(exc, BundleFormatError):
            raise
        raise BundleFormatError(f"Malformed model bundle {path}: {exc}") from exc
    logger.info("Loaded model bundle from %s", path)
    return bundle


COMPATIBILITY_KEYS = (
    "look_back",
    "look_ahead",
    "in_grid",
    "out_grid",
    "in_algorithm",
    "out_algorithm",
    "target_channel",
)


def check_compatible(
    bundle: ModelBundle,
    preprocess: PreprocessConfig,
    channel_names: Optional[Sequence[str]] = None,
) -> None:
    """Refuse data preprocessed differently from the bundle's training data.

    Raises:
        ConfigMismatchError: Naming every key that differs.
    """
    mismatched = [
        key
        for key in COMPATIBILITY_KEYS
        if getattr(preprocess, key) != getattr(bundle.preprocess, key)
    ]
    if channel_names is not None and tuple(channel_names) != tuple(bundle.channel_names):
        mismatched.append("channel_names")
    if mismatched:
        raise ConfigMismatchError(mismatched)
