"""Minimal parameter container shared by every learnable component."""
from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator

import numpy as np

from .tensors import BatchNormState, ConvParams, Tensor


class Module:
    """Walks attributes in definition order to enumerate parameters and buffers."""

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    yield f"{name}.{i}", item
            else:
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, ConvParams):
                yield f"{full}.weight", value.weights
                yield f"{full}.bias", value.bias
            elif isinstance(value, BatchNormState):
                yield f"{full}.gamma", value.gamma
                yield f"{full}.beta", value.beta
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, BatchNormState):
                image = value.statistics == "image"
                yield f"{full}.running_mean", value.running_mean if image else value.crop_mean
                yield f"{full}.running_var", value.running_var if image else value.crop_var
                yield f"{full}.crop_mean", value.crop_mean if image else value.running_mean
                yield f"{full}.crop_var", value.crop_var if image else value.running_var
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{full}.")

    def batch_norms(self) -> Iterator[BatchNormState]:
        for _, value in self._children():
            if isinstance(value, BatchNormState):
                yield value
            elif isinstance(value, Module):
                yield from value.batch_norms()

    def set_mode(self, mode: str) -> None:
        for bn in self.batch_norms():
            bn.mode = mode

    @contextmanager
    def crop_statistics(self):
        """Batch norm reads and updates the crop statistics inside the block.

        Upsampled crops have different first and second moments from whole
        images, so sharing one running estimate miscalibrates both passes.
        """
        bns = list(self.batch_norms())
        for bn in bns:
            bn.use_statistics("crop")
        try:
            yield
        finally:
            for bn in bns:
                bn.use_statistics("image")

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
