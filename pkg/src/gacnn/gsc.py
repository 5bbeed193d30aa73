"""Granularity-specific classifier heads and their joint objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .module import Module, he_uniform
from .pooling import PoolingConfig, global_pool
from .tensors import Tensor, linear, nll_from_probs, softmax_t, stack_sum
from .tensors.core import mul


class ClassifierHead(Module):
    def __init__(self, rng, stage_index: int, width: int, classes: int, dtype=np.float32):
        self.stage_index = stage_index
        self.weights = Tensor(he_uniform(rng, (classes, width), width, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(classes, dtype=dtype), requires_grad=True)

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    def logits(self, enhanced_map: Tensor, pooling: PoolingConfig, smallest_hw: int | None = None,
               layout: str = "NCHW") -> Tensor:
        channels = enhanced_map.shape[1 if layout == "NCHW" else 3]
        if channels != self.width:
            raise ConfigError(f"head for stage {self.stage_index} expects width {self.width}, "
                              f"got {channels} channels")
        pooled = global_pool(enhanced_map, pooling, smallest_hw, layout)
        return linear(pooled, self.weights, self.bias)


@dataclass
class GranularityHead:
    """One supervised stage's outputs for a batch."""
    stage_index: int
    pooled: np.ndarray
    logits: Tensor
    prediction: np.ndarray


@dataclass
class LossBundle:
    per_stage: list[Tensor]
    total: Tensor

    def values(self) -> list[float]:
        return [float(t.data) for t in self.per_stage]


def head_forward(enhanced_map: Tensor, head: ClassifierHead, pooling: PoolingConfig,
                 smallest_hw: int | None = None, layout: str = "NCHW") -> Tensor:
    """Pool, classify and softmax; returns a differentiable (batch, classes) probability tensor."""
    return softmax_t(head.logits(enhanced_map, pooling, smallest_hw, layout))


def stage_loss(probs: Tensor, labels) -> Tensor:
    """-log p(label), batch-averaged, with p clamped at 1e-12."""
    return nll_from_probs(probs, labels)


def total_loss(per_stage: Sequence[Tensor], weights: Sequence[float] | None = None) -> LossBundle:
    """Sum of stage losses in ascending stage order, optionally weighted."""
    if not per_stage:
        raise ValueError("total_loss needs at least one stage loss")
    terms = list(per_stage)
    if weights is not None and len(weights):
        if len(weights) != len(terms):
            raise ShapeError(f"{len(weights)} weights for {len(terms)} stage losses")
        terms = [t if w == 1.0 else mul(t, w) for t, w in zip(terms, weights)]
    return LossBundle(list(per_stage), stack_sum(terms))


def average_predictions(predictions: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean of probability arrays of equal shape, independent of their order."""
    if len(predictions) == 0:
        raise ValueError("cannot average an empty set of predictions")
    arrs = [np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in predictions]
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ShapeError(f"prediction shapes differ: {[a.shape for a in arrs]}")
    # sorting first pins the summation order, so any permutation gives the same bits
    return np.sort(np.stack(arrs), axis=0).mean(axis=0)
