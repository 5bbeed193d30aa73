"""Differentiable layers: convolution, batch norm, ReLU, affine, softmax CE."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ShapeError
from .core import Tensor, debug_enabled, make_node


@dataclass
class ConvParams:
    weights: Tensor  # (out_channels, in_channels, kh, kw)
    bias: Tensor  # (out_channels,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4-d, got shape {self.weights.shape}")
        o, _, kh, kw = self.weights.shape
        if kh < 1 or kw < 1:
            raise ConfigError(f"kernel extent must be >= 1, got {kh}x{kw}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if self.bias.shape != (o,):
            raise ShapeError(f"conv bias shape {self.bias.shape} does not match {o} output channels")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1
    mode: str = "training"
    # a second pair of running statistics, swapped in for localized crops
    crop_mean: np.ndarray | None = None
    crop_var: np.ndarray | None = None
    statistics: str = "image"

    @classmethod
    def create(cls, channels: int, dtype=np.float32, **kw) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            crop_mean=np.zeros(channels, dtype=dtype),
            crop_var=np.ones(channels, dtype=dtype),
            **kw,
        )

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("batch norm epsilon must be positive")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError("batch norm momentum must lie in (0, 1)")
        if self.mode not in ("training", "inference"):
            raise ConfigError(f"unknown batch norm mode {self.mode!r}")
        if self.crop_mean is None:
            self.crop_mean = np.zeros_like(self.running_mean)
        if self.crop_var is None:
            self.crop_var = np.ones_like(self.running_var)

    def use_statistics(self, which: str) -> None:
        """Make ``running_mean``/``running_var`` refer to the image or the crop statistics."""
        if which not in ("image", "crop"):
            raise ConfigError(f"unknown statistics set {which!r}")
        if which != self.statistics:
            self.running_mean, self.crop_mean = self.crop_mean, self.running_mean
            self.running_var, self.crop_var = self.crop_var, self.running_var
            self.statistics = which


def _check_layout(layout: str) -> None:
    if layout not in ("NCHW", "NHWC"):
        raise ConfigError(f"unknown layout {layout!r}")


def conv2d(x: Tensor, params: ConvParams, layout: str = "NCHW") -> Tensor:
    """2-D cross-correlation computed as one patch-matrix product.

    ``layout="NHWC"`` takes and returns channels-last batches, which avoids
    two full transposes per call; weights are (out, in, kh, kw) either way.
    """
    _check_layout(layout)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-d {layout} input, got shape {x.shape}")
    nhwc = x.data if layout == "NHWC" else x.data.transpose(0, 2, 3, 1)
    n, h, w, c = nhwc.shape
    o, ci, kh, kw = params.weights.shape
    if c != ci:
        raise ShapeError(f"conv2d input has {c} channels but weights expect {ci}")
    s, p = params.stride, params.padding
    if h + 2 * p < kh or w + 2 * p < kw:
        raise ShapeError(f"padded input {h + 2 * p}x{w + 2 * p} smaller than kernel {kh}x{kw}")
    oh = (h + 2 * p - kh) // s + 1
    ow = (w + 2 * p - kw) // s + 1
    if oh <= 0 or ow <= 0:
        raise ConfigError(f"conv2d output would be empty ({oh}x{ow})")

    # patch columns ordered (kh, kw, c) to match this weight matrix
    Wm = params.weights.data.transpose(0, 2, 3, 1).reshape(o, -1)
    pointwise = kh == 1 and kw == 1 and p == 0
    if pointwise:
        cols = (nhwc[:, ::s, ::s] if s > 1 else nhwc).reshape(-1, c)
    else:
        xp = np.pad(nhwc, ((0, 0), (p, p), (p, p), (0, 0))) if p else nhwc
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * c)
    out = cols @ Wm.T
    out += params.bias.data
    out = out.reshape(n, oh, ow, o)
    if layout == "NCHW":
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        g2 = (g if layout == "NHWC" else g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gw = gb = gx = None
        if params.weights.requires_grad:
            gw = (g2.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        if params.bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gcols = g2 @ Wm
            if pointwise:
                if s == 1:
                    gx = gcols.reshape(n, h, w, c)
                else:
                    gx = np.zeros((n, h, w, c), dtype=x.dtype)
                    gx[:, ::s, ::s] = gcols.reshape(n, oh, ow, c)
            else:
                gcols = gcols.reshape(n, oh, ow, kh, kw, c)
                gxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=x.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + s * oh:s, j:j + s * ow:s] += gcols[:, :, :, i, j]
                gx = gxp[:, p:p + h, p:p + w] if p else gxp
            if layout == "NCHW":
                gx = gx.transpose(0, 3, 1, 2)
        return gx, gw, gb

    return make_node(out, (x, params.weights, params.bias), backward, "conv2d")


def batch_norm(x: Tensor, state: BatchNormState, layout: str = "NCHW") -> Tensor:
    """Per-channel normalization of a 4-d batch.

    Training mode normalizes with the biased batch variance and folds the
    unbiased estimate into the running statistics; inference mode uses the
    running statistics and is a fixed affine map.
    """
    _check_layout(layout)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects a 4-d {layout} input, got shape {x.shape}")
    caxis = 1 if layout == "NCHW" else 3
    axes = tuple(a for a in range(4) if a != caxis)
    c = x.shape[caxis]
    if state.gamma.shape != (c,):
        raise ShapeError(f"batch_norm has {state.gamma.shape[0]} channels, input has {c}")
    bshape = [1, 1, 1, 1]
    bshape[caxis] = c
    gamma = state.gamma.data.reshape(bshape)
    beta = state.beta.data.reshape(bshape)
    eps = state.epsilon

    if state.mode == "inference":
        inv = 1.0 / np.sqrt(state.running_var.reshape(bshape) + eps)
        xhat = (x.data - state.running_mean.reshape(bshape)) * inv
        out = (gamma * xhat + beta).astype(x.dtype, copy=False)

        def backward_inf(g):
            return (g * (gamma * inv),
                    (g * xhat).sum(axis=axes),
                    g.sum(axis=axes))

        return make_node(out, (x, state.gamma, state.beta), backward_inf, "batch_norm")

    m = x.data.size // c
    mean = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mean
    var = np.square(xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = (xhat * gamma + beta).astype(x.dtype, copy=False)

    mom = state.momentum
    unbiased = var.reshape(c) * (m / (m - 1) if m > 1 else 1.0)
    state.running_mean[...] = (1 - mom) * state.running_mean + mom * mean.reshape(c)
    state.running_var[...] = (1 - mom) * state.running_var + mom * unbiased

    def backward(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        scale = gamma * inv
        gx = scale * (g - (gbeta / m).reshape(bshape) - xhat * (ggamma / m).reshape(bshape))
        return gx.astype(x.dtype, copy=False), ggamma, gbeta

    return make_node(out, (x, state.gamma, state.beta), backward, "batch_norm")


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is 0."""
    out = np.maximum(x.data, 0)
    return make_node(out, (x,), lambda g: (g * (x.data > 0),), "relu")


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return make_node(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                     lambda g: (g.transpose(inverse),), "transpose")


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """y = x W^T + b for x of shape (batch, in)."""
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(f"linear expects 2-d input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(f"linear input width {x.shape[1]} does not match weight width {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"linear bias shape {bias.shape} does not match {weights.shape[0]} outputs")
    out = x.data @ weights.data.T + bias.data

    def backward(g):
        return g @ weights.data, g.T @ x.data, g.sum(axis=0)

    return make_node(out, (x, weights, bias), backward, "linear")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(labels: np.ndarray, batch: int, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError(f"expected {batch} labels, got shape {labels.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= classes))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"label {int(labels[i])} of sample {i} outside [0, {classes})")
    return labels.astype(np.int64)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Batch-mean of -log softmax(logits)[label]; also returns the probabilities."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    n, k = logits.shape
    labels = _check_labels(labels, n, k)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    probs = np.exp(logp)
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return make_node(loss, (logits,), backward, "softmax_cross_entropy"), probs


def nll_from_probs(probs: Tensor, labels, floor: float = 1e-12) -> Tensor:
    """Batch-mean of -log p(label) with p clamped below at ``floor``."""
    n, k = probs.shape
    labels = _check_labels(labels, n, k)
    rows = np.arange(n)
    picked = probs.data[rows, labels]
    clamped = picked < floor
    if clamped.any():
        if debug_enabled():
            raise FloatingPointError(
                f"true-class probability below {floor} for samples {np.flatnonzero(clamped).tolist()}")
    safe = np.maximum(picked, floor)
    loss = np.asarray(-np.log(safe).mean(), dtype=probs.dtype)

    def backward(g):
        d = np.zeros_like(probs.data)
        d[rows, labels] = np.where(clamped, 0.0, -1.0 / safe) * (g / n)
        return (d,)

    return make_node(loss, (probs,), backward, "nll")


def softmax_t(logits: Tensor) -> Tensor:
    """Differentiable row-wise softmax."""
    p = softmax(logits.data)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return make_node(p, (logits,), backward, "softmax")
