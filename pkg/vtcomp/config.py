"""YAML run configuration.

Every section is optional; missing keys take the documented defaults and
unknown keys are rejected::

    schedule: {kind: cosine, initial_tokens: 16, num_layers: 28}
    strategy: suffix
    segment: {window_frames: 64, stride_frames: 32, clip_size: 8}
    chunk: {chunk_frames: 512, n_repeat: 2, n_selected_frames: 512}
    model: {num_layers: 28, model_width: 1536, ...}
    toy: {num_layers: 4, num_heads: 2, model_width: 32, mlp_width: 64, seed: 0}
    bench: {total_frames: 256, end_bias: 4.0, ...}
    seeds: {start: 0, count: 1}
    outputs: {directory: results}
"""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import yaml
from loguru import logger

from .cost import ModelDims
from .errors import ValidationError
from .plan import DropStrategy
from .schedule import DEFAULT_NUM_STAGES, CompressionSchedule, ScheduleKind, build_stepwise_matching
from .scoring import ChunkConfig, SegmentConfig
from .toy import ToyConfig
from .utils import write_yaml_atomic

_TOP_LEVEL = ("schedule", "strategy", "segment", "chunk", "model", "toy", "bench", "seeds", "outputs")


@dataclass(frozen=True)
class ScheduleSettings:
    kind: str = ScheduleKind.COSINE.value
    initial_tokens: int = 16
    num_layers: int = 28
    num_stages: int = DEFAULT_NUM_STAGES
    stages: Optional[Tuple[Tuple[int, int], ...]] = None

    def build(self) -> CompressionSchedule:
        """Materialize the schedule; stepwise without stages matches the cosine average."""
        kind = ScheduleKind(self.kind)
        if kind is ScheduleKind.COSINE:
            return CompressionSchedule.cosine(self.initial_tokens, self.num_layers)
        if kind is ScheduleKind.CONSTANT:
            return CompressionSchedule.constant(self.initial_tokens, self.num_layers)
        if self.stages:
            return CompressionSchedule.stepwise(self.initial_tokens, self.num_layers, self.stages)
        return build_stepwise_matching(self.initial_tokens, self.num_layers, self.num_stages)


@dataclass(frozen=True)
class ToySettings:
    num_layers: int = 4
    num_heads: int = 2
    model_width: int = 32
    mlp_width: int = 64
    max_sequence: int = 4096
    dtype: str = "float32"
    seed: int = 0

    def build(self) -> ToyConfig:
        return ToyConfig(
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            model_width=self.model_width,
            mlp_width=self.mlp_width,
            max_sequence=self.max_sequence,
            dtype=self.dtype,
        )


@dataclass(frozen=True)
class BenchSettings:
    """Synthetic benchmark parameters.

    The bias defaults reproduce the frozen fixture: a needle at frame 128 of
    256 against an end bias of 4, swept over ``end_bias_sweep``.
    """

    total_frames: int = 256
    begin_bias: float = 0.0
    end_bias_sweep: Tuple[float, ...] = (0.0, 1.0, 2.0, 3.0, 4.0)
    needle_frame: int = 128
    needle_signal: float = 3.0
    noise_scale: float = 0.0
    niah_frames: int = 256
    niah_hops: int = 1
    niah_signal: float = 8.0
    niah_noise_scale: float = 0.5
    niah_n_repeat: int = 8


@dataclass(frozen=True)
class SeedSettings:
    start: int = 0
    count: int = 1

    @property
    def seeds(self) -> range:
        return range(self.start, self.start + self.count)


@dataclass(frozen=True)
class OutputSettings:
    """Where CLI commands put their files.

    Attributes:
        directory: Base for relative output paths. When set, reports that
            would go to stdout are written to a default file name here.
    """

    directory: Optional[str] = None

    def __post_init__(self):
        if self.directory is not None and not isinstance(self.directory, str):
            raise ValueError(f"directory must be a path string, got {self.directory!r}")


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    strategy: DropStrategy = DropStrategy.SUFFIX
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    chunk: ChunkConfig = field(default_factory=ChunkConfig)
    model: ModelDims = field(default_factory=ModelDims)
    toy: ToySettings = field(default_factory=ToySettings)
    bench: BenchSettings = field(default_factory=BenchSettings)
    seeds: SeedSettings = field(default_factory=SeedSettings)
    outputs: OutputSettings = field(default_factory=OutputSettings)

    @classmethod
    def from_mapping(cls, data: Optional[Mapping[str, Any]]) -> "RunConfig":
        """Validate a parsed YAML mapping.

        Raises:
            ValidationError: On unknown keys or invalid values.
        """
        data = dict(data or {})
        unknown = sorted(set(data) - set(_TOP_LEVEL))
        if unknown:
            raise ValidationError(f"Unknown config sections: {unknown}")
        try:
            strategy = DropStrategy(data.get("strategy", DropStrategy.SUFFIX.value))
        except ValueError as exc:
            raise ValidationError(f"strategy: {exc}") from exc
        schedule_data = dict(data.get("schedule") or {})
        if schedule_data.get("stages") is not None:
            schedule_data["stages"] = tuple(tuple(int(v) for v in s) for s in schedule_data["stages"])
        segment_data = dict(data.get("segment") or {})
        if segment_data.get("scoring_layers") is not None:
            segment_data["scoring_layers"] = tuple(segment_data["scoring_layers"])
        bench_data = dict(data.get("bench") or {})
        if "end_bias_sweep" in bench_data:
            bench_data["end_bias_sweep"] = tuple(float(v) for v in bench_data["end_bias_sweep"])
        config = cls(
            schedule=_section(ScheduleSettings, "schedule", schedule_data),
            strategy=strategy,
            segment=_section(SegmentConfig, "segment", segment_data),
            chunk=_section(ChunkConfig, "chunk", data.get("chunk")),
            model=_section(ModelDims, "model", data.get("model")),
            toy=_section(ToySettings, "toy", data.get("toy")),
            bench=_section(BenchSettings, "bench", bench_data),
            seeds=_section(SeedSettings, "seeds", data.get("seeds")),
            outputs=_section(OutputSettings, "outputs", data.get("outputs")),
        )
        try:
            config.schedule.build()
            config.toy.build()
        except ValueError as exc:
            raise ValidationError(f"invalid config: {exc}") from exc
        return config

    def to_mapping(self) -> Dict[str, Any]:
        data = {name: _plain(asdict(getattr(self, name))) for name in _TOP_LEVEL if name != "strategy"}
        data["strategy"] = self.strategy.value
        return {name: data[name] for name in _TOP_LEVEL}

    def dump(self, path: Union[str, Path]) -> Path:
        return write_yaml_atomic(path, self.to_mapping())


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _section(cls, name: str, data: Optional[Mapping[str, Any]]):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"Unknown keys in {name}: {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: {exc}") from exc


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load a YAML run configuration, or the defaults when ``path`` is None.

    Raises:
        ValidationError: If the file is not a YAML mapping or fails validation.
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"config file {path} is not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ValidationError(f"config file {path} must hold a mapping, got {type(data).__name__}")
    logger.info(f"Loaded run config from {path}")
    return RunConfig.from_mapping(data)
