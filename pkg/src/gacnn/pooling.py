"""Global pooling of NCHW feature maps to (N, C) vectors: average, max, top-k."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensors import Tensor
from .tensors.core import make_node, reshape

METHODS = ("gap", "gmp", "gtkp")


@dataclass(frozen=True)
class PoolingConfig:
    method: str = "gtkp"
    k: int = 4
    # "area": k is quoted at the smallest supervised map and scaled by area for larger maps
    k_scaling: str = "area"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown pooling method {self.method!r}; expected one of {METHODS}")
        if self.k < 1:
            raise ConfigError(f"top-k pooling needs k >= 1, got {self.k}")
        if self.k_scaling not in ("area", "fixed"):
            raise ConfigError(f"unknown k scaling {self.k_scaling!r}")

    def k_for(self, hw: int, smallest_hw: int) -> int:
        if self.k_scaling == "fixed":
            return self.k
        return max(1, (self.k * hw) // smallest_hw)


def _unbatched(fn):
    """Let a pooling op accept a single C x H x W map as well as a batch."""

    @functools.wraps(fn)
    def wrapper(x: Tensor, *args, layout: str = "NCHW"):
        if x.ndim == 3:
            if layout != "NCHW":
                raise ShapeError("an unbatched map must be C x H x W")
            out = fn(reshape(x, (1,) + x.shape), *args)
            return reshape(out, out.shape[1:])
        return fn(x, *args, layout=layout)

    return wrapper


def _flat(x: Tensor, layout: str) -> tuple[np.ndarray, int]:
    """View the map as (N, C, HW) or (N, HW, C); returns it with its spatial axis."""
    if x.ndim != 4:
        raise ShapeError(f"pooling expects a 4-d {layout} input, got shape {x.shape}")
    if layout == "NCHW":
        n, c, h, w = x.shape
        flat, axis = x.data.reshape(n, c, h * w), 2
    elif layout == "NHWC":
        n, h, w, c = x.shape
        flat, axis = x.data.reshape(n, h * w, c), 1
    else:
        raise ConfigError(f"unknown layout {layout!r}")
    if h * w < 1:
        raise ShapeError("pooling over an empty spatial extent")
    return flat, axis


@_unbatched
def gap(x: Tensor, layout: str = "NCHW") -> Tensor:
    """Per-channel mean over all spatial positions."""
    flat, axis = _flat(x, layout)
    hw = flat.shape[axis]
    out = flat.sum(axis=axis) / hw

    def backward(g):
        gf = np.broadcast_to(np.expand_dims(g / hw, axis), flat.shape)
        return (gf.reshape(x.shape).astype(x.dtype),)

    return make_node(out.astype(x.dtype, copy=False), (x,), backward, "gap")


@_unbatched
def gmp(x: Tensor, layout: str = "NCHW") -> Tensor:
    """Per-channel max; the gradient goes to the first maximal position in row-major order."""
    flat, axis = _flat(x, layout)
    idx = np.expand_dims(flat.argmax(axis=axis), axis)
    out = np.take_along_axis(flat, idx, axis=axis)
    out = out.reshape(out.shape[0], -1)

    def backward(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx, np.expand_dims(g, axis), axis=axis)
        return (gf.reshape(x.shape),)

    return make_node(out, (x,), backward, "gmp")


def topk_mask(flat: np.ndarray, k: int, axis: int = -1) -> np.ndarray:
    """Boolean mask of the k largest entries along ``axis``; ties go to the earliest index."""
    size = flat.shape[axis]
    kth = np.expand_dims(np.partition(flat, size - k, axis=axis).take(size - k, axis=axis), axis)
    # NaNs sort last in np.partition; keep them in the mask so they propagate instead of vanishing
    greater = (flat > kth) | np.isnan(flat)
    missing = k - greater.sum(axis=axis, keepdims=True)
    equal = flat == kth
    return greater | (equal & (np.cumsum(equal, axis=axis) <= missing))


@_unbatched
def gtkp(x: Tensor, k: int, layout: str = "NCHW") -> Tensor:
    """Per-channel mean of the k largest activations."""
    flat, axis = _flat(x, layout)
    hw = flat.shape[axis]
    if not 1 <= k <= hw:
        raise ConfigError(f"top-k pooling needs 1 <= k <= {hw}, got k={k}")
    mask = topk_mask(flat, k, axis)
    # summing the masked map in place order makes k=1 and k=H*W reproduce gmp/gap bit-for-bit
    out = np.where(mask, flat, 0).sum(axis=axis) / k

    def backward(g):
        return ((mask * np.expand_dims(g / k, axis)).astype(x.dtype, copy=False).reshape(x.shape),)

    return make_node(out.astype(x.dtype, copy=False), (x,), backward, "gtkp")


def global_pool(x: Tensor, config: PoolingConfig, smallest_hw: int | None = None,
                layout: str = "NCHW") -> Tensor:
    if config.method == "gap":
        return gap(x, layout=layout)
    if config.method == "gmp":
        return gmp(x, layout=layout)
    hw = x.shape[2] * x.shape[3] if layout == "NCHW" else x.shape[1] * x.shape[2]
    k = config.k_for(hw, smallest_hw or hw)
    return gtkp(x, min(k, hw), layout=layout)
