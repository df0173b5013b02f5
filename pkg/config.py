"""
Run configuration.

One dataclass per section of the text format. A config file is a list of
"section.key = value" lines; "#" starts a comment. Parsing is fail-closed:
an unknown section or key, or a value that does not coerce to the field's
type, raises ConfigurationError naming the offending key.
"""
from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Tuple, get_type_hints

from constants import TraceKind
from errors import ConfigurationError

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "CRFP_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"

DSV_PRESETS = ((8, 24), (16, 16), (24, 8), (32, 0))


@dataclass
class CrfpConfig:
    """
    Architecture of the network. scale and levels are structural: the first
    levels - 1 aggregators run at 2x LR, then a x4 up-sampler feeds the last
    one at HR, so scale is always 2 * 4.
    """
    scale: int = 8
    levels: int = 4
    base_channels: int = 32
    hr_channels: int = 4
    fovea_size: int = 96
    dsv_split: Tuple[int, int] = (24, 8)
    fast_region: Optional[int] = None
    offset_range: float = 10.0
    charbonnier_eps: float = 1e-3
    res_blocks: int = 1
    flow_channels: int = 16
    flow_range: float = 10.0
    use_fovea: bool = True
    flow_propagation: bool = True
    seed: int = 0

    @property
    def pass_channels(self) -> int:
        return self.dsv_split[0]

    @property
    def dsv_channels(self) -> int:
        return self.dsv_split[1]

    @property
    def hr_split(self) -> tuple[int, int]:
        """(pass, dsv) channels of the final aggregator, scaled to hr_channels."""
        dsv = self.dsv_channels * self.hr_channels // self.base_channels
        return self.hr_channels - dsv, dsv

    def validate(self) -> None:
        """
        :raises ConfigurationError: if the values cannot build a network.
        """
        if self.scale != 8:
            raise ConfigurationError(f"crfp.scale must be 8, got {self.scale}")
        if self.levels < 2:
            raise ConfigurationError(f"crfp.levels must be at least 2, got {self.levels}")
        if sum(self.dsv_split) != self.base_channels:
            raise ConfigurationError(
                f"crfp.dsv_split {self.dsv_split} must sum to base_channels {self.base_channels}")
        if self.pass_channels < 1 or self.dsv_channels < 0:
            raise ConfigurationError(f"crfp.dsv_split {self.dsv_split} needs pass channels")
        if min(self.base_channels, self.hr_channels, self.flow_channels, self.res_blocks) < 1:
            raise ConfigurationError("channel widths and res_blocks must be positive")
        if self.fast_region is not None and self.fast_region < 4:
            raise ConfigurationError(f"crfp.fast_region too small: {self.fast_region}")
        if self.offset_range <= 0 or self.flow_range <= 0 or self.charbonnier_eps <= 0:
            raise ConfigurationError("offset_range, flow_range and charbonnier_eps must be positive")

    @classmethod
    def full_scale(cls, dsv_split: tuple[int, int] = (24, 8)) -> CrfpConfig:
        """
        Full-size channel plan. res_blocks=30 only calibrates the parameter
        count into the 1.5M..3M range; the architecture does not fix the depth.
        """
        return cls(dsv_split=dsv_split, res_blocks=30)

    @classmethod
    def toy(cls) -> CrfpConfig:
        """Narrow network for desk-scale runs and tests."""
        return cls(base_channels=16, dsv_split=(12, 4), fovea_size=32, flow_channels=8)


@dataclass
class TrainConfig:
    lr_model: float = 1e-4
    lr_flow: float = 2.5e-5
    batch_size: int = 2
    iterations: int = 2000
    unroll: int = 10
    patch_size: int = 256
    fovea_size: int = 128
    clip_norm: float = 10.0
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 50
    prefetch: int = 2
    flow_pretrain_iterations: int = 0
    flow_pretrain_lr: float = 1e-3
    flow_pretrain_shift: int = 4

    def validate(self, scale: int = 8) -> None:
        """
        :raises ConfigurationError: if the schedule or patch geometry is unusable.
        """
        if not self.lr_flow < self.lr_model:
            raise ConfigurationError(
                f"train.lr_flow ({self.lr_flow}) must be below train.lr_model ({self.lr_model})")
        if self.patch_size % scale:
            raise ConfigurationError(
                f"train.patch_size {self.patch_size} not divisible by the scale {scale}")
        if not 0 < self.fovea_size <= self.patch_size:
            raise ConfigurationError(
                f"train.fovea_size {self.fovea_size} must fit inside patch {self.patch_size}")
        if min(self.batch_size, self.iterations, self.unroll, self.prefetch) < 1:
            raise ConfigurationError("batch_size, iterations, unroll and prefetch must be positive")


@dataclass
class DataConfig:
    train_dir: str = ""
    eval_dir: str = ""
    max_frames: int = 0


@dataclass
class TraceConfig:
    kind: TraceKind = TraceKind.RASTER
    sigma: float = 0.0
    seed: int = 0
    row: int = -1


@dataclass
class OutputConfig:
    output_dir: str = ""
    jobs: int = 1
    write_frames: bool = False

    def output_root(self) -> Path:
        """run.output_dir, else $CRFP_OUTPUT_ROOT, else ./runs."""
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


@dataclass
class RunConfig:
    crfp: CrfpConfig = field(default_factory=CrfpConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    trace: TraceConfig = field(default_factory=TraceConfig)
    run: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> None:
        self.crfp.validate()
        self.train.validate(self.crfp.scale)
        if self.run.jobs < 1:
            raise ConfigurationError(f"run.jobs must be positive, got {self.run.jobs}")
        if self.trace.sigma < 0:
            raise ConfigurationError(f"trace.sigma must be non-negative, got {self.trace.sigma}")

    def dump(self) -> str:
        """Every field, in the text format parse_config reads back."""
        lines = []
        for section in dataclasses.fields(self):
            values = getattr(self, section.name)
            for item in dataclasses.fields(values):
                lines.append(f"{section.name}.{item.name} = {_format(getattr(values, item.name))}")
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dump(), encoding="utf-8")
        logger.debug("resolved config written to %s", path)


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return "/".join(str(v) for v in value)
    return str(value)


def _coerce(key: str, raw: str, hint: Any) -> Any:
    try:
        if hint is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false"):
                raise ValueError(raw)
            return lowered == "true"
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if hint == Optional[int]:
            return None if raw.lower() == "none" else int(raw)
        if hint == Tuple[int, int]:
            first, second = raw.split("/")
            return int(first), int(second)
        if isinstance(hint, type) and issubclass(hint, Enum):
            return hint(raw)
    except ValueError:
        raise ConfigurationError(f"invalid value {raw!r} for {key}") from None
    raise ConfigurationError(f"unsupported field type for {key}")


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """
    Apply "section.key = value" lines on top of base (defaults if None).

    :raises ConfigurationError: on a malformed line, unknown key or bad value.
    """
    config = base if base is not None else RunConfig()
    sections = {f.name: getattr(config, f.name) for f in dataclasses.fields(config)}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {number}: expected 'section.key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        section_name, _, name = key.partition(".")
        if section_name not in sections:
            raise ConfigurationError(f"unknown config key {key!r}")
        section = sections[section_name]
        hints = get_type_hints(type(section))
        if name not in hints:
            raise ConfigurationError(f"unknown config key {key!r}")
        setattr(section, name, _coerce(key, raw, hints[name]))
    return config


def load_config(path: str | Path) -> RunConfig:
    """
    Read and validate a config file.

    :raises ConfigurationError: if the file is missing, malformed or invalid.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    config = parse_config(text)
    config.validate()
    return config
