"""Staged plain-conv feature extractor and the per-stage enhancement blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import BackboneConfig
from .errors import ConfigError
from .module import Module, he_uniform
from .tensors import BatchNormState, ConvParams, Tensor, batch_norm, conv2d, relu, transpose


@dataclass(frozen=True)
class StageSpec:
    blocks: int
    out_channels: int
    downsample: bool

    def __post_init__(self):
        if self.blocks < 1 or self.out_channels < 1:
            raise ConfigError(f"invalid stage {self}")


def stage_specs(cfg: BackboneConfig) -> list[StageSpec]:
    return [StageSpec(cfg.blocks, c, (i + 1) in cfg.downsample) for i, c in enumerate(cfg.channels)]


# channels-last inside the network: no transposes around each conv
LAYOUT = "NHWC"


class ConvBlock(Module):
    """conv -> batch norm -> relu on channels-last batches."""

    def __init__(self, rng, cin: int, cout: int, kernel: int, stride: int, dtype, bn_momentum=0.1):
        fan_in = cin * kernel * kernel
        self.conv = ConvParams(
            weights=Tensor(he_uniform(rng, (cout, cin, kernel, kernel), fan_in, dtype), requires_grad=True),
            bias=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True),
            stride=stride,
            padding=kernel // 2,
        )
        self.bn = BatchNormState.create(cout, dtype=dtype, momentum=bn_momentum)

    def __call__(self, x: Tensor) -> Tensor:
        return relu(batch_norm(conv2d(x, self.conv, LAYOUT), self.bn, LAYOUT))


class Backbone(Module):
    def __init__(self, specs: list[StageSpec], rng: np.random.Generator, in_channels: int = 3,
                 dtype=np.float32, bn_momentum: float = 0.1):
        self.specs = tuple(specs)
        blocks = []
        cin = in_channels
        for spec in specs:
            stage = []
            for b in range(spec.blocks):
                stride = 2 if (spec.downsample and b == 0) else 1
                stage.append(ConvBlock(rng, cin, spec.out_channels, 3, stride, dtype, bn_momentum))
                cin = spec.out_channels
            blocks.append(_Stage(stage))
        self.stages = blocks
        rf = self.receptive_fields()
        if any(a >= b for a, b in zip(rf, rf[1:])):
            raise ConfigError(f"receptive fields must grow strictly with stage index, got {rf}")

    @property
    def num_stages(self) -> int:
        return len(self.specs)

    def reduction(self, stage: int) -> int:
        """Cumulative downsampling factor at the output of 1-based ``stage``."""
        return 2 ** sum(s.downsample for s in self.specs[:stage])

    def receptive_fields(self) -> list[int]:
        rf, jump, out = 1, 1, []
        for spec in self.specs:
            for b in range(spec.blocks):
                rf += 2 * jump
                if spec.downsample and b == 0:
                    jump *= 2
            out.append(rf)
        return out

    def __call__(self, images: Tensor) -> list[Tensor]:
        """NCHW images in, one NHWC map per stage out."""
        factor = self.reduction(self.num_stages)
        h, w = images.shape[2:]
        if h % factor or w % factor:
            raise ConfigError(f"input size {h}x{w} must be a multiple of {factor}")
        maps = []
        x = transpose(images, (0, 2, 3, 1))
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps


class _Stage(Module):
    def __init__(self, blocks: list[ConvBlock]):
        self.blocks = blocks

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class Enhancer(Module):
    """1x1 projection to a shared width, then a 3x3 refinement; spatial size preserved."""

    def __init__(self, rng, cin: int, width: int, dtype=np.float32, bn_momentum: float = 0.1):
        self.project = ConvBlock(rng, cin, width, 1, 1, dtype, bn_momentum)
        self.refine = ConvBlock(rng, width, width, 3, 1, dtype, bn_momentum)

    def __call__(self, x: Tensor) -> Tensor:
        return self.refine(self.project(x))


@dataclass
class StagePyramid:
    """Stage outputs B_1..B_L and enhanced maps for the last S stages, all N x h x w x c."""
    stages: list[Tensor]
    enhanced: list[Tensor]
    num_supervised: int
    reductions: list[int] = field(default_factory=list)

    @property
    def L(self) -> int:
        return len(self.stages)

    @property
    def S(self) -> int:
        return self.num_supervised

    @property
    def supervised_indices(self) -> list[int]:
        return list(range(self.L - self.S + 1, self.L + 1))

    def dims(self) -> list[tuple[int, int, int]]:
        """(c_i, w_i, h_i) per stage."""
        return [(m.shape[3], m.shape[2], m.shape[1]) for m in self.stages]

    def enhanced_chw(self, i: int = -1) -> np.ndarray:
        """Enhanced map ``i`` as an N x C x h x w array."""
        return self.enhanced[i].data.transpose(0, 3, 1, 2)


def enhance(stage_map: Tensor, enhancer: Enhancer) -> Tensor:
    return enhancer(stage_map)


def forward_stages(images: Tensor, model) -> StagePyramid:
    """Run the backbone and enhance the last S stage outputs."""
    maps = model.backbone(images)
    S = len(model.enhancers)
    enhanced = [enh(m) for enh, m in zip(model.enhancers, maps[-S:])]
    reductions = [model.backbone.reduction(i + 1) for i in range(len(maps))]
    return StagePyramid(maps, enhanced, S, reductions)
