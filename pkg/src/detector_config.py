#!/usr/bin/env python3
# Copyright 2026 The QG Anomaly Detector Authors.
# See LICENSE file for licensing details.

"""Config of the detector."""

import configparser
import dataclasses
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import (  # pylint: disable=no-name-in-module,import-error
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

logger = logging.getLogger(__name__)

DEFAULT_SECTION = "preprocess"
SUPPORTED_THRESHOLDS = ("length", "cum_amp", "max_amp")


class ConfigInvalidError(Exception):
    """Exception raised when a detector configuration is found to be invalid."""

    def __init__(self, msg: str):
        """Initialize a new instance of the ConfigInvalidError exception.

        Args:
            msg (str): Explanation of the error.
        """
        self.msg = msg
        super().__init__(self.msg)


class GridAlgorithm(str, Enum):
    """Bin edges calculation algorithms."""

    static = "static"
    adaptive = "adaptive"
    none = "none"


class Optimizer(str, Enum):
    """Weight update rules available to the trainer."""

    sgd = "sgd"
    adam = "adam"


class RejectionMode(str, Enum):
    """Ways in which the analyzer closes an anomaly candidate."""

    first_true = "first_true"
    true_count = "true_count"
    true_ratio = "true_ratio"


class SelectionCriterion(str, Enum):
    """Criteria used to rank detector setups in a sweep."""

    best_length = "best_length"
    best_cum_amp = "best_cum_amp"
    best_max_amp = "best_max_amp"
    best_accuracy = "best_accuracy"
    balanced = "balanced"


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class PreprocessConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Data preprocessing options, keyed by the software variable names."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    look_back: int = Field(default=16, ge=1)
    look_ahead: int = Field(default=1, ge=1)
    in_grid: int = Field(default=16, ge=2)
    out_grid: int = Field(default=8, ge=2)
    in_algorithm: GridAlgorithm = GridAlgorithm.adaptive
    out_algorithm: GridAlgorithm = GridAlgorithm.adaptive
    samples_percentage: float = Field(default=1.0, gt=0.0, le=1.0)
    target_channel: int = Field(default=0, ge=0)
    seed: int = 0
    decimation: int = Field(default=1, ge=1)
    train_only_bounds: bool = False


class ModelConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Shape of the GRU classifier."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    cells: int = Field(default=64, ge=1)
    layers: int = Field(default=1, ge=1)


class TrainingConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Hyper-parameters of the training loop."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=0.05, gt=0.0)
    validation_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    optimizer: Optimizer = Optimizer.sgd
    seed: int = 0


class AnalyzerConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Analyzer candidate handling and the properties thresholds are searched over."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    thresholds: Tuple[str, ...] = SUPPORTED_THRESHOLDS
    rejection: RejectionMode = RejectionMode.first_true
    required_true: int = Field(default=1, ge=1)
    max_true_ratio: float = Field(default=0.5, gt=0.0)

    @field_validator("thresholds", mode="before")
    @classmethod
    def split_thresholds(cls, value: Any) -> Any:
        """Accept a comma separated list of property names."""
        return _split_list(value)

    @field_validator("thresholds")
    @classmethod
    def validate_thresholds(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        """Validate that only supported properties are named, without repetition."""
        if not value:
            raise ValueError("thresholds")
        for name in value:
            if name not in SUPPORTED_THRESHOLDS:
                raise ValueError("thresholds")
        if len(set(value)) != len(value):
            raise ValueError("thresholds")
        return value


class SynthConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Synthetic corpus generator options."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "synthetic"
    train_length: int = Field(default=500_000, ge=1)
    test_length: int = Field(default=150_000, ge=1)
    sample_period: float = Field(default=0.1, gt=0.0)
    channel_names: Tuple[str, ...] = ("v0", "v1", "i")
    ramp_rate_fast: float = Field(default=50.0, ge=0.0)
    ramp_rate_slow: float = Field(default=10.0, ge=0.0)
    ramp_fast_samples: int = Field(default=200, ge=0)
    ramp_slow_samples: int = Field(default=300, ge=0)
    ramp_down_samples: int = Field(default=100, ge=0)
    inductance: Tuple[float, ...] = (0.004, -0.004)
    periodic_period: int = Field(default=37, ge=1)
    periodic_amplitude: float = Field(default=0.1, ge=0.0)
    noise: float = Field(default=0.0, ge=0.0)
    anomaly_count: int = Field(default=200, ge=0)
    step_duration: int = Field(default=100, ge=1)
    step_height: float = Field(default=0.3, gt=0.0, le=1.0)
    min_gap: int = Field(default=300, ge=0)
    target_channel: int = Field(default=0, ge=0)
    seed: int = 0

    @field_validator("channel_names", "inductance", mode="before")
    @classmethod
    def split_values(cls, value: Any) -> Any:
        """Accept comma separated lists."""
        return _split_list(value)

    @model_validator(mode="after")
    def validate_channels(self) -> "SynthConfig":
        """Validate that every voltage channel has a coupling and the target exists."""
        if len(self.channel_names) < 2:
            raise ValueError("channel_names")
        if len(self.inductance) != len(self.channel_names) - 1:
            raise ValueError("inductance")
        if self.target_channel >= len(self.channel_names):
            raise ValueError("target_channel")
        return self


class PipelineConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Application quality requirements and detector design loop options."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    min_f1: float = Field(default=0.0, ge=0.0, le=1.0)
    min_f2: float = Field(default=0.0, ge=0.0, le=1.0)
    max_iterations: int = Field(default=3, ge=0)
    workers: int = Field(default=1, ge=1)
    criterion: SelectionCriterion = SelectionCriterion.best_length
    predict_batch: int = Field(default=4096, ge=1)


class SweepGrid(BaseModel):  # pylint: disable=too-few-public-methods
    """Candidate values per hyper-parameter; every axis holds at least one value."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    in_grid: List[int] = Field(default_factory=list)
    out_grid: List[int] = Field(default_factory=list)
    look_back: List[int] = Field(default_factory=list)
    in_algorithm: List[GridAlgorithm] = Field(default_factory=list)
    out_algorithm: List[GridAlgorithm] = Field(default_factory=list)
    cells: List[int] = Field(default_factory=list)
    layers: List[int] = Field(default_factory=list)
    learning_rate: List[float] = Field(default_factory=list)

    @field_validator("*", mode="before")
    @classmethod
    def split_axes(cls, value: Any) -> Any:
        """Accept comma separated arrays."""
        return _split_list(value)

    def axes(self) -> Dict[str, list]:
        """Return the non-empty axes in declaration order."""
        return {name: list(values) for name, values in self if values}


class FeaturesConfig(BaseModel):  # pylint: disable=too-few-public-methods
    """Baseline feature bank options."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    window_sizes: Tuple[int, ...] = (1024, 512, 128)
    hop: Optional[int] = Field(default=None, ge=1)
    ctm_radius_factor: float = Field(default=0.1, gt=0.0)

    @field_validator("window_sizes", mode="before")
    @classmethod
    def split_sizes(cls, value: Any) -> Any:
        """Accept comma separated window sizes."""
        return _split_list(value)

    @field_validator("window_sizes")
    @classmethod
    def validate_sizes(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        """Validate that every window holds enough samples for the moment features."""
        if not value or any(size < 8 for size in value):
            raise ValueError("window_sizes")
        return value


class ChannelConversion(BaseModel):  # pylint: disable=too-few-public-methods
    """Physical unit conversion of a single channel.

    Voltage channels use the analogue stage gain times the ADC LSB, the current
    channel uses the DCCT conversion factor; a bare multiplier covers the rest.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    gain: Optional[float] = None
    lsb: Optional[float] = None
    factor: Optional[float] = None
    multiplier: Optional[float] = None

    @model_validator(mode="before")
    @classmethod
    def parse_pairs(cls, value: Any) -> Any:
        """Accept the `gain=5, lsb=9.5348e-6` form used in config files."""
        if isinstance(value, str):
            pairs = {}
            for item in _split_list(value):
                key, _, raw = item.partition("=")
                pairs[key.strip()] = raw.strip()
            return pairs
        return value

    @model_validator(mode="after")
    def validate_kind(self) -> "ChannelConversion":
        """Validate that exactly one conversion kind is described."""
        adc = self.gain is not None or self.lsb is not None
        if adc and (self.gain is None or self.lsb is None):
            raise ValueError("gain and lsb must be given together")
        kinds = [adc, self.factor is not None, self.multiplier is not None]
        if sum(kinds) != 1:
            raise ValueError("exactly one of gain/lsb, factor or multiplier is required")
        return self

    @property
    def value(self) -> float:
        """The multiplier applied to raw samples."""
        if self.gain is not None and self.lsb is not None:
            return self.gain * self.lsb
        if self.factor is not None:
            return self.factor
        return float(self.multiplier)  # type: ignore[arg-type]


VOLTAGE_CONVERSION = ChannelConversion(gain=5.0, lsb=9.5348e-6)
CURRENT_CONVERSION = ChannelConversion(factor=2000.0)

SECTION_MODELS = {
    "preprocess": PreprocessConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "analyzer": AnalyzerConfig,
    "synth": SynthConfig,
    "pipeline": PipelineConfig,
    "sweep": SweepGrid,
    "features": FeaturesConfig,
}
SEEDED_SECTIONS = ("preprocess", "training", "synth")


@dataclasses.dataclass(frozen=True)
class DetectorConfig:
    """Represents the complete configuration of a detector setup.

    Attributes:
        preprocess: Preprocessing options (look_back, grids, sampling).
        model: GRU classifier shape.
        training: Training loop hyper-parameters.
        analyzer: Candidate handling and threshold search properties.
        synth: Synthetic corpus generator options.
        pipeline: Quality requirements and design loop options.
        sweep: Hyper-parameter sweep axes.
        features: Baseline feature bank options.
        conversion: Per channel physical unit conversion, keyed by channel name.
    """

    preprocess: PreprocessConfig = PreprocessConfig()
    model: ModelConfig = ModelConfig()
    training: TrainingConfig = TrainingConfig()
    analyzer: AnalyzerConfig = AnalyzerConfig()
    synth: SynthConfig = SynthConfig()
    pipeline: PipelineConfig = PipelineConfig()
    sweep: SweepGrid = SweepGrid()
    features: FeaturesConfig = FeaturesConfig()
    conversion: Dict[str, ChannelConversion] = dataclasses.field(default_factory=dict)

    @classmethod
    def from_sections(
        cls,
        sections: Dict[str, Dict[str, str]],
        seed: Optional[int] = None,
    ) -> "DetectorConfig":
        """Initialize a new instance of the DetectorConfig class from raw sections.

        Args:
            sections: Mapping of section name to its raw key=value pairs.
            seed: When given, overrides every seed in the configuration.

        Raises:
            ConfigInvalidError: If any section or key is not valid.
        """
        error_fields: list = []
        values: Dict[str, Any] = {}
        for section, raw in sections.items():
            if section == "conversion":
                values["conversion"] = _validate_conversion(raw, error_fields)
                continue
            if section not in SECTION_MODELS:
                error_fields.append(section)
                continue
            data = dict(raw)
            if seed is not None and section in SEEDED_SECTIONS:
                data["seed"] = str(seed)
            try:
                values[section] = SECTION_MODELS[section](**data)
            except ValidationError as exc:
                error_fields.extend(_error_fields(exc))
        if seed is not None:
            _seed_missing_sections(values, sections, seed)
        if error_fields:
            error_fields = sorted(set(error_fields))
            error_field_str = ", ".join(f"'{f}'" for f in error_fields)
            raise ConfigInvalidError(
                f"The following configurations are not valid: [{error_field_str}]"
            )
        return cls(**values)

    @classmethod
    def from_file(cls, path: Path, seed: Optional[int] = None) -> "DetectorConfig":
        """Initialize a new instance of the DetectorConfig class from a config file.

        A file without section headers is read as the `[preprocess]` section.
        """
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigInvalidError(f"Could not read config file {path}: {exc}") from exc
        if not _has_section_header(text):
            text = f"[{DEFAULT_SECTION}]\n{text}"
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # type: ignore[assignment,method-assign]
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigInvalidError(f"Could not parse config file {path}: {exc}") from exc
        sections = {name: dict(parser.items(name)) for name in parser.sections()}
        config = cls.from_sections(sections, seed=seed)
        logger.info("Loaded configuration from %s", path)
        return config


def _seed_missing_sections(
    values: Dict[str, Any], sections: Dict[str, Dict[str, str]], seed: int
) -> None:
    for section in SEEDED_SECTIONS:
        if section not in values and section not in sections:
            values[section] = SECTION_MODELS[section](seed=seed)


def _has_section_header(text: str) -> bool:
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        return stripped.startswith("[")
    return False


def _error_fields(exc: ValidationError) -> List[str]:
    error_fields: List[str] = []
    for error in exc.errors():
        if param := error["loc"]:
            error_fields.append(str(param[0]))
        else:
            value_error_msg: ValueError = error["ctx"]["error"]  # type: ignore
            error_fields.extend(str(value_error_msg).split())
    return error_fields


def _validate_conversion(
    raw: Dict[str, str], error_fields: List[str]
) -> Dict[str, ChannelConversion]:
    conversion: Dict[str, ChannelConversion] = {}
    for channel, spec in raw.items():
        try:
            conversion[channel] = ChannelConversion.model_validate(spec)
        except ValidationError:
            error_fields.append(channel)
    return conversion
