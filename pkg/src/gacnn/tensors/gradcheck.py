"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Tensor


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    location: tuple | None = None  # (input index, element index) of the worst entry
    message: str = ""

    @property
    def passed(self) -> bool:
        return np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" at input {self.location[0]} index {self.location[1]}" if self.location else ""
        extra = f" ({self.message})" if self.message else ""
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:.0e}){where}{extra}"


def grad_check(
    op: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = 1e-6,
    h: float = 1e-5,
    name: str = "op",
    seed: int = 0,
    corrupt: bool = False,
) -> GradCheckReport:
    """Compare backprop gradients of ``op`` against central differences.

    ``op`` receives one float64 Tensor per array in ``inputs``.  A
    non-scalar result is reduced to a scalar by a fixed random weighting of
    its entries (a plain sum would make batch norm and softmax gradients
    vanish identically).  The per-entry error is ``|a - n| / max(|a|, |n|, 1)``.
    ``corrupt`` perturbs the analytic gradient, for exercising the failure path.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    probe = op(*[Tensor(a) for a in arrays])
    weights = np.random.default_rng(seed).uniform(0.5, 1.5, size=probe.shape)

    def scalar(*arrs):
        out = op(*[Tensor(a) for a in arrs])
        return float((out.data * weights).sum())

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*leaves)
    out.backward(weights)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    if corrupt:
        analytic = [g + 1e-2 for g in analytic]

    worst, loc = 0.0, None
    for idx, (arr, ana) in enumerate(zip(arrays, analytic)):
        if not np.all(np.isfinite(ana)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(ana))[0])
            return GradCheckReport(name, float("inf"), tolerance, (idx, bad), "non-finite gradient")
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = scalar(*arrays)
            flat[j] = orig - h
            fm = scalar(*arrays)
            flat[j] = orig
            nflat[j] = (fp - fm) / (2 * h)
        err = np.abs(ana - numeric) / np.maximum(np.maximum(np.abs(ana), np.abs(numeric)), 1.0)
        if err.size and err.max() > worst:
            worst = float(err.max())
            loc = (idx, tuple(int(i) for i in np.unravel_index(err.argmax(), err.shape)))
    return GradCheckReport(name, worst, tolerance, loc)
