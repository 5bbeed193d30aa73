"""SGD with momentum, cosine-annealed learning rates, the training loop and evaluation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import TrainConfig
from .data import Dataset, augment
from .gsc import average_predictions, total_loss
from .model import GACNN
from .oam import BBox, localize_batch
from .tensors import softmax_cross_entropy

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


@dataclass
class OptimState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    momentum: float = 0.9
    weight_decay: float = 1e-5
    lr_backbone: float = 0.002
    lr_new: float = 0.02
    epoch: int = 0
    total_epochs: int = 60

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0 or self.lr_backbone < 0 or self.lr_new < 0:
            raise ValueError("weight decay and learning rates must be non-negative")


def cosine_lr(base_lr: float, epoch: int, total: int) -> float:
    """Half-cosine decay from ``base_lr`` at epoch 0 to 0 at ``total``; no restarts."""
    if total <= 0:
        raise ValueError("cosine schedule needs total > 0")
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    # fraction first so the midpoint of an even schedule lands exactly on base_lr / 2
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * (epoch / total)))


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimState,
             lr: float | Mapping[str, float]) -> Mapping[str, np.ndarray]:
    """In-place heavy-ball update with coupled weight decay.

    v <- m v + g + wd w ;  w <- w - lr v.  ``lr`` may be a per-parameter mapping.
    """
    m, wd = state.momentum, state.weight_decay
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {w.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = m * v + g
        if wd:
            v = v + wd * w
        state.velocity[name] = v.astype(w.dtype, copy=False)
        step = lr[name] if isinstance(lr, Mapping) else lr
        w -= (step * state.velocity[name]).astype(w.dtype, copy=False)
    return params


@dataclass
class EvalResult:
    accuracy: float
    head_accuracies: list[float]
    head_names: list[str]
    predictions: np.ndarray  # averaged probabilities, N x classes
    boxes: list[BBox] | None = None


def score_predictions(head_probs: Sequence[np.ndarray], labels: np.ndarray,
                      head_names: Sequence[str] | None = None) -> EvalResult:
    """Top-1 accuracy of every head and of their average; argmax ties go to the lowest class."""
    labels = np.asarray(labels)
    accs = [float((np.argmax(p, axis=1) == labels).mean()) for p in head_probs]
    avg = average_predictions(head_probs)
    names = list(head_names) if head_names else [f"head{i}" for i in range(len(head_probs))]
    return EvalResult(float((np.argmax(avg, axis=1) == labels).mean()), accs, names, avg)


def evaluate(model: GACNN, dataset: Dataset, mode: str = "coarse", alpha: float | None = None,
             batch_size: int = 100) -> EvalResult:
    """Accuracy of the averaged prediction plus each head.

    ``two-pass`` localizes every image, classifies the crop as well, and
    averages all 2S heads.
    """
    if mode not in ("coarse", "two-pass"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    alpha = model.config.oam.alpha if alpha is None else alpha
    rule = model.config.oam.channel_rule
    model.set_mode("inference")
    coarse: list[list[np.ndarray]] = [[] for _ in model.heads]
    fine: list[list[np.ndarray]] = [[] for _ in model.heads]
    boxes: list[BBox] = []
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start:start + batch_size].astype(model.dtype, copy=False)
        probs, feats = model.predict(x)
        for acc, p in zip(coarse, probs):
            acc.append(p)
        if mode == "two-pass":
            crops, bb = localize_batch(feats, x, model.last_reduction, alpha, rule)
            boxes += bb
            with model.crop_statistics():
                probs2, _ = model.predict(crops)
            for acc, p in zip(fine, probs2):
                acc.append(p)
    stages = model.supervised_stages
    heads = [np.concatenate(c) for c in coarse]
    names = [f"coarse{s}" for s in stages]
    if mode == "two-pass":
        heads += [np.concatenate(f) for f in fine]
        names += [f"fine{s}" for s in stages]
    res = score_predictions(heads, dataset.labels, names)
    res.boxes = boxes if mode == "two-pass" else None
    return res


@dataclass
class EpochMetrics:
    epoch: int
    lr_backbone: float
    lr_new: float
    train_loss: float
    head_accuracies: list[float]
    accuracy: float
    seconds: float = 0.0


METRIC_FIELDS = ("epoch", "lr_backbone", "lr_new", "train_loss")


def metrics_header(head_names: Sequence[str]) -> str:
    return "\t".join([*METRIC_FIELDS, *(f"acc_{n}" for n in head_names), "acc_avg"])


def metrics_row(m: EpochMetrics) -> str:
    cells = [str(m.epoch), repr(m.lr_backbone), repr(m.lr_new), f"{m.train_loss:.8f}"]
    cells += [f"{a:.6f}" for a in m.head_accuracies] + [f"{m.accuracy:.6f}"]
    return "\t".join(cells)


@dataclass
class TrainResult:
    model: GACNN
    state: OptimState
    metrics: list[EpochMetrics]
    head_names: list[str]

    def metrics_text(self) -> str:
        return metrics_header(self.head_names) + "\n" + "".join(metrics_row(m) + "\n" for m in self.metrics)


def _stage_losses(model: GACNN, images: np.ndarray, labels: np.ndarray):
    res = model(images)
    return res, [softmax_cross_entropy(lg, labels)[0] for lg in res.logits]


def train(config: TrainConfig, train_set: Dataset, test_set: Dataset | None = None,
          model: GACNN | None = None,
          on_epoch_end: Callable[[EpochMetrics, GACNN, OptimState], None] | None = None) -> TrainResult:
    """Optimize the summed per-stage objective over shuffled mini-batches.

    With ``oam.fine_pass_training`` each batch is also localized, cropped and
    re-fed, and the S fine-pass losses join the total.
    """
    config.validate()
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    t = config.training
    model = model or GACNN(config, classes=train_set.num_classes)
    state = OptimState(momentum=t.momentum, weight_decay=t.weight_decay, lr_backbone=t.lr_backbone,
                       lr_new=t.lr_new, epoch=0, total_epochs=t.epochs)
    groups = model.param_groups()
    params = {n: p for g in groups.values() for n, p in g}
    group_of = {n: g for g, items in groups.items() for n, _ in items}
    weights = list(config.gsc.weights) or None
    fine = config.oam.fine_pass_training
    if fine and weights:
        weights = weights * 2
    two_pass = config.eval_two_pass()
    stages = model.supervised_stages
    head_names = [f"coarse{s}" for s in stages] + ([f"fine{s}" for s in stages] if two_pass else [])

    shuffle_rng = np.random.default_rng([t.shuffle_seed, 0])
    aug_rng = np.random.default_rng([t.shuffle_seed, 1])
    metrics: list[EpochMetrics] = []
    n = len(train_set)
    for epoch in range(t.epochs):
        started = time.perf_counter()
        lr_b = cosine_lr(t.lr_backbone, epoch, t.epochs)
        lr_n = cosine_lr(t.lr_new, epoch, t.epochs)
        lrs = {name: (lr_b if group_of[name] == "backbone" else lr_n) for name in params}
        model.set_mode("training")
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for b, start in enumerate(range(0, n, t.batch_size)):
            idx = order[start:start + t.batch_size]
            x = augment(train_set.images[idx], aug_rng, t.flip, t.pad_crop).astype(model.dtype, copy=False)
            y = train_set.labels[idx]
            res, losses = _stage_losses(model, x, y)
            if not all(math.isfinite(float(l.data)) for l in losses):
                raise DivergenceError(f"loss diverged at epoch {epoch} batch {b}")
            if fine and epoch >= config.oam.fine_pass_start:
                crops, _ = localize_batch(res.pyramid.enhanced_chw(-1), x, model.last_reduction,
                                          config.oam.alpha, config.oam.channel_rule)
                with model.crop_statistics():
                    losses += _stage_losses(model, crops, y)[1]
            bundle = total_loss(losses, weights)
            value = float(bundle.total.data)
            if not math.isfinite(value):
                raise DivergenceError(f"loss diverged at epoch {epoch} batch {b}")
            model.zero_grad()
            bundle.total.backward()
            grads = {name: p.grad for name, p in params.items() if p.grad is not None}
            try:
                sgd_step({k: p.data for k, p in params.items()}, grads, state, lrs)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch} batch {b}") from None
            loss_sum += value * len(idx)
        state.epoch = epoch + 1

        last = epoch == t.epochs - 1
        if test_set is not None and (last or (t.eval_every and (epoch + 1) % t.eval_every == 0)):
            ev = evaluate(model, test_set, "two-pass" if two_pass else "coarse")
            head_acc, acc = ev.head_accuracies, ev.accuracy
        else:
            head_acc, acc = [float("nan")] * len(head_names), float("nan")
        m = EpochMetrics(epoch, lr_b, lr_n, loss_sum / n, head_acc, acc, time.perf_counter() - started)
        metrics.append(m)
        log.info("epoch %d loss %.4f acc %.4f (%.1fs)", epoch, m.train_loss, acc, m.seconds)
        if on_epoch_end is not None:
            on_epoch_end(m, model, state)
    model.set_mode("inference")
    return TrainResult(model, state, metrics, head_names)
