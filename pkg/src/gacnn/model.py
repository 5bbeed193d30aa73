"""The full network: backbone, enhancement blocks and one classifier per supervised stage."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import LAYOUT, Backbone, Enhancer, StagePyramid, forward_stages, stage_specs
from .config import TrainConfig
from .gsc import ClassifierHead, GranularityHead
from .module import Module
from .pooling import PoolingConfig
from .tensors import Tensor, no_grad, softmax


@dataclass
class ForwardResult:
    pyramid: StagePyramid
    logits: list[Tensor]

    def probabilities(self) -> list[np.ndarray]:
        return [softmax(l.data.astype(np.float64)) for l in self.logits]


class GACNN(Module):
    def __init__(self, config: TrainConfig, classes: int | None = None, dtype=np.float32, seed: int | None = None):
        self.config = config
        b = config.backbone
        classes = classes if classes is not None else config.data.classes
        rng = np.random.default_rng(config.training.seed if seed is None else seed)
        specs = stage_specs(b)
        self.backbone = Backbone(specs, rng, 3, dtype, b.bn_momentum)
        S = config.gsc.stages
        L = len(specs)
        self.enhancers = [Enhancer(rng, specs[i - 1].out_channels, b.enhance_width, dtype, b.bn_momentum)
                          for i in range(L - S + 1, L + 1)]
        self.heads = [ClassifierHead(rng, i, b.enhance_width, classes, dtype) for i in range(L - S + 1, L + 1)]
        self.pooling = config.pooling_config
        self.classes = classes
        self.dtype = np.dtype(dtype)

    @property
    def supervised_stages(self) -> list[int]:
        return [h.stage_index for h in self.heads]

    def _smallest_hw(self, pyramid: StagePyramid) -> int:
        return min(m.shape[1] * m.shape[2] for m in pyramid.enhanced)

    def forward(self, images) -> ForwardResult:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))
        pyramid = forward_stages(x, self)
        smallest = self._smallest_hw(pyramid)
        logits = [head.logits(m, self.pooling, smallest, LAYOUT) for head, m in zip(self.heads, pyramid.enhanced)]
        return ForwardResult(pyramid, logits)

    __call__ = forward

    def predict(self, images) -> tuple[list[np.ndarray], np.ndarray]:
        """Per-head probabilities and the enhanced last-stage map (N x C x h x w), without gradients."""
        with no_grad():
            res = self.forward(images)
        return res.probabilities(), res.pyramid.enhanced_chw(-1)

    def granularity_heads(self, result: ForwardResult) -> list[GranularityHead]:
        from .pooling import global_pool

        smallest = self._smallest_hw(result.pyramid)
        out = []
        for head, m, lg in zip(self.heads, result.pyramid.enhanced, result.logits):
            with no_grad():
                pooled = global_pool(m, self.pooling, smallest, LAYOUT).data
            out.append(GranularityHead(head.stage_index, pooled, lg, softmax(lg.data.astype(np.float64))))
        return out

    def param_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        """Stage convolutions form the backbone group; enhancers and heads are the new layers."""
        groups: dict[str, list[tuple[str, Tensor]]] = {"backbone": [], "new": []}
        for name, p in self.named_parameters():
            groups["backbone" if name.startswith("backbone.") else "new"].append((name, p))
        return groups

    @property
    def last_reduction(self) -> int:
        return self.backbone.reduction(self.backbone.num_stages)
