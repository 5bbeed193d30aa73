"""Registry of finite-difference checks covering every differentiable op."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .backbone import Enhancer
from .gsc import ClassifierHead
from .pooling import PoolingConfig, gap, gmp, gtkp
from .tensors import (BatchNormState, ConvParams, GradCheckReport, Tensor, batch_norm, conv2d, grad_check,
                      linear, relu, softmax_cross_entropy)

Check = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[np.ndarray]]]


def _spaced(rng, shape, gap_size=1e-2):
    """Distinct values at least ``gap_size`` apart, so max/top-k selections are tie-free."""
    n = int(np.prod(shape))
    vals = (np.arange(n) - n / 2) * gap_size + rng.uniform(0, gap_size / 10, n)
    return rng.permutation(vals).reshape(shape)


def _conv(rng):
    def op(x, w, b):
        return conv2d(x, ConvParams(w, b, stride=1, padding=1))
    return op, [rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)]


def _conv_strided(rng):
    def op(x, w, b):
        return conv2d(x, ConvParams(w, b, stride=2, padding=1), layout="NHWC")
    return op, [rng.normal(size=(2, 5, 5, 2)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)]


def _batch_norm(rng):
    def op(x, g, b):
        state = BatchNormState(g, b, np.zeros(3), np.ones(3))
        return batch_norm(x, state)
    return op, [rng.normal(size=(4, 3, 3, 3)), rng.uniform(0.5, 1.5, 3), rng.normal(size=3)]


def _relu(rng):
    mag = rng.uniform(1e-1, 1.0, size=(3, 7))
    return relu, [mag * rng.choice([-1.0, 1.0], size=mag.shape)]


def _linear(rng):
    return linear, [rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), rng.normal(size=5)]


def _softmax_ce(rng):
    labels = rng.integers(0, 6, size=4)
    return (lambda z: softmax_cross_entropy(z, labels)[0]), [rng.normal(size=(4, 6))]


def _gap(rng):
    return gap, [rng.normal(size=(2, 3, 4, 4))]


def _gmp(rng):
    return gmp, [_spaced(rng, (2, 3, 4, 4))]


def _gtkp(rng):
    return (lambda x: gtkp(x, 5)), [_spaced(rng, (2, 3, 4, 4))]


def _head(rng):
    labels = rng.integers(0, 4, size=2)
    cfg = PoolingConfig("gtkp", 3, "fixed")

    def op(fmap, w, b):
        head = ClassifierHead(np.random.default_rng(0), 5, 3, 4, np.float64)
        head.weights, head.bias = w, b
        return softmax_cross_entropy(head.logits(fmap, cfg), labels)[0]

    return op, [_spaced(rng, (2, 3, 3, 3)), rng.normal(size=(4, 3)), rng.normal(size=4)]


def _enhance(rng):
    block = Enhancer(np.random.default_rng(1), 2, 3, np.float64)

    def op(x):
        return block(x)

    return op, [rng.normal(size=(2, 3, 3, 2))]


GRADCHECKS: dict[str, Check] = {
    "conv2d": _conv,
    "conv2d_stride2_nhwc": _conv_strided,
    "batch_norm": _batch_norm,
    "relu": _relu,
    "linear": _linear,
    "softmax_cross_entropy": _softmax_ce,
    "gap": _gap,
    "gmp": _gmp,
    "gtkp": _gtkp,
    "head": _head,
    "enhance": _enhance,
}


def run_gradcheck(tolerance: float = 1e-6, corrupt: str | None = None, seed: int = 0) -> list[GradCheckReport]:
    """One report per registered op; ``corrupt`` names an op whose analytic gradient is sabotaged."""
    if corrupt is not None and corrupt not in GRADCHECKS:
        raise KeyError(f"no gradient check named {corrupt!r}")
    reports = []
    for i, (name, build) in enumerate(GRADCHECKS.items()):
        op, inputs = build(np.random.default_rng([seed, i]))
        reports.append(grad_check(op, inputs, tolerance, name=name, corrupt=(name == corrupt)))
    return reports
