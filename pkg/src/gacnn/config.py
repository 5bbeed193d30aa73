"""Experiment configuration: nested dataclasses read from flat ``section.key = value`` files."""
from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class BackboneConfig:
    channels: tuple[int, ...] = (8, 16, 32, 64, 64)
    blocks: int = 1
    # stage indices (1-based) whose first block has stride 2
    downsample: tuple[int, ...] = (2, 3, 4, 5)
    enhance_width: int = 32
    bn_momentum: float = 0.1


@dataclass
class GSCConfig:
    stages: int = 3
    # empty means all-ones
    weights: tuple[float, ...] = ()


@dataclass
class PoolingSection:
    method: str = "gtkp"
    k: int = 4
    k_scaling: str = "area"


@dataclass
class OAMConfig:
    alpha: float = 0.3
    channel_rule: str = "max"
    fine_pass_training: bool = True
    # first epoch whose batches also train on the cropped images; early
    # attention maps are noise, and skipping them keeps a run inside budget
    fine_pass_start: int = 20


@dataclass
class TrainingConfig:
    epochs: int = 60
    batch_size: int = 20
    lr_backbone: float = 0.002
    lr_new: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-5
    seed: int = 0
    shuffle_seed: int = 1
    flip: bool = True
    pad_crop: int = 4
    eval_every: int = 1
    # coarse | two-pass | auto (two-pass when the fine pass is trained)
    eval_mode: str = "auto"
    checkpoint_every: int = 0


@dataclass
class DataConfig:
    source: str = "synth"
    classes: int = 8
    image_size: int = 64
    glyph_size: int = 6
    train_per_class: int = 200
    test_per_class: int = 100
    seed: int = 0
    distractors: int = 2
    glyph_contrast: float = 0.7
    glyph_distance: int = 6


@dataclass
class TrainConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    gsc: GSCConfig = field(default_factory=GSCConfig)
    pooling: PoolingSection = field(default_factory=PoolingSection)
    oam: OAMConfig = field(default_factory=OAMConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "TrainConfig":
        b = self.backbone
        if not b.channels or any(c < 1 for c in b.channels):
            raise ConfigError(f"backbone.channels must be positive, got {b.channels}")
        if b.blocks < 1:
            raise ConfigError("backbone.blocks must be >= 1")
        L = len(b.channels)
        if any(not 1 <= i <= L for i in b.downsample):
            raise ConfigError(f"backbone.downsample indices must lie in 1..{L}")
        if not 1 <= self.gsc.stages <= L:
            raise ConfigError(f"gsc.stages must lie in 1..{L}, got {self.gsc.stages}")
        if self.gsc.weights and len(self.gsc.weights) != self.gsc.stages:
            raise ConfigError("gsc.weights needs exactly one entry per supervised stage")
        if not 0.0 <= self.oam.alpha < 1.0:
            raise ConfigError(f"oam.alpha must lie in [0, 1), got {self.oam.alpha}")
        if self.oam.channel_rule not in ("max", "sum"):
            raise ConfigError(f"oam.channel_rule must be max or sum, got {self.oam.channel_rule!r}")
        if self.oam.fine_pass_start < 0:
            raise ConfigError(f"oam.fine_pass_start must be >= 0, got {self.oam.fine_pass_start}")
        t = self.training
        if t.epochs < 0 or t.batch_size < 1:
            raise ConfigError("training.epochs must be >= 0 and training.batch_size >= 1")
        if not 0.0 <= t.momentum < 1.0 or t.weight_decay < 0 or t.lr_backbone < 0 or t.lr_new < 0:
            raise ConfigError("optimizer settings out of range")
        if t.eval_mode not in ("auto", "coarse", "two-pass"):
            raise ConfigError(f"training.eval_mode must be auto, coarse or two-pass, got {t.eval_mode!r}")
        factor = 2 ** len(b.downsample)
        if self.data.image_size % factor:
            raise ConfigError(f"data.image_size must be a multiple of {factor}")
        if not 0.0 < self.data.glyph_contrast <= 1.0 or self.data.distractors < 0:
            raise ConfigError("data.glyph_contrast must lie in (0, 1] and data.distractors be >= 0")
        from .pooling import PoolingConfig

        PoolingConfig(self.pooling.method, self.pooling.k, self.pooling.k_scaling)
        return self

    @property
    def pooling_config(self):
        from .pooling import PoolingConfig

        return PoolingConfig(self.pooling.method, self.pooling.k, self.pooling.k_scaling)

    def eval_two_pass(self) -> bool:
        mode = self.training.eval_mode
        return mode == "two-pass" or (mode == "auto" and self.oam.fine_pass_training)

    # flat key = value view

    def items(self) -> list[tuple[str, str]]:
        out = []
        for sec in dataclasses.fields(self):
            section = getattr(self, sec.name)
            for f in dataclasses.fields(section):
                out.append((f"{sec.name}.{f.name}", _format(getattr(section, f.name))))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()

    def set(self, key: str, raw: str) -> None:
        try:
            sec_name, name = key.strip().split(".")
            section = getattr(self, sec_name)
            if not dataclasses.is_dataclass(section):
                raise AttributeError
        except (ValueError, AttributeError):
            raise ConfigError(f"unknown config key {key!r}") from None
        hints = typing.get_type_hints(type(section))
        if name not in hints:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            value = _parse(hints[name], raw.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        setattr(section, name, value)

    def with_overrides(self, overrides: dict[str, str] | list[str]) -> "TrainConfig":
        cfg = dataclasses.replace(self, **{f.name: dataclasses.replace(getattr(self, f.name))
                                           for f in dataclasses.fields(self)})
        pairs = overrides.items() if isinstance(overrides, dict) else (split_override(o) for o in overrides)
        for k, v in pairs:
            cfg.set(k, str(v) if not isinstance(v, str) else v)
        return cfg.validate()


def split_override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(tp, raw: str):
    origin = typing.get_origin(tp)
    if origin is tuple:
        (elem, *_rest) = typing.get_args(tp)
        return tuple(_parse(elem, part.strip()) for part in raw.split(",") if part.strip())
    if tp is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    return raw


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cfg = base or TrainConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        cfg.set(k, v)
    return cfg.validate()


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> TrainConfig:
    cfg = TrainConfig()
    if path is not None:
        cfg = parse_config_text(Path(path).read_text(), cfg)
    return cfg.with_overrides(overrides or [])
