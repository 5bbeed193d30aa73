"""Named desk-scale experiments with an on-disk cache of trained models.

The cache key covers the full config text and the package source, so any
change to either retrains.
"""
from __future__ import annotations

import hashlib
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import TrainConfig
from .data import Dataset, generate_synthetic, synth_spec_from_config
from .model import GACNN
from .oam import BBox, box_iou
from .training import EvalResult, evaluate, train

log = logging.getLogger(__name__)

ALPHAS = (0.1, 0.2, 0.3, 0.4, 0.5)
# test-set evaluation every tenth epoch (and after the last) keeps it out of most of the training time
_EVAL = ["training.eval_every=10"]
_COARSE = _EVAL + ["oam.fine_pass_training=false"]

# name -> overrides on top of the defaults
RUNS: dict[str, list[str]] = {
    "single": _COARSE + ["gsc.stages=1"],
    "gsc": _COARSE,
    "gsc_gap": _COARSE + ["pooling.method=gap"],
    "gsc_gmp": _COARSE + ["pooling.method=gmp"],
    "gsc_oam": _EVAL,
}


def default_cache_dir() -> Path:
    return Path(os.environ.get("GACNN_CACHE", Path.home() / ".cache" / "gacnn"))


def source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.rglob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def run_key(config: TrainConfig) -> str:
    return hashlib.sha256((config.to_text() + source_digest()).encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    name: str
    config: TrainConfig
    model: GACNN
    metrics_text: str
    seconds: float  # training wall time; 0 when unknown
    cached: bool


def run(name: str, overrides: list[str] | None = None, cache_dir: str | Path | None = None,
        data: tuple[Dataset, Dataset] | None = None) -> RunRecord:
    """Train the named experiment, or load it from the cache when an identical run exists."""
    config = TrainConfig().with_overrides(RUNS[name] + list(overrides or []))
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    folder = cache / f"{name}-{run_key(config)}"
    ckpt = folder / "model.gkpt"
    if ckpt.exists():
        model, _, _ = checkpoint.load(ckpt, config)
        seconds = float((folder / "seconds").read_text()) if (folder / "seconds").exists() else 0.0
        return RunRecord(name, config, model, (folder / "metrics.tsv").read_text(), seconds, True)

    train_set, test_set = data or generate_synthetic(synth_spec_from_config(config))
    log.info("training %s (%s)", name, folder.name)
    started = time.perf_counter()
    result = train(config, train_set, test_set)
    seconds = time.perf_counter() - started
    folder.mkdir(parents=True, exist_ok=True)
    checkpoint.save(result.model, result.state, ckpt)
    (folder / "metrics.tsv").write_text(result.metrics_text())
    (folder / "seconds").write_text(f"{seconds:.1f}\n")
    return RunRecord(name, config, result.model, result.metrics_text(), seconds, False)


def localization_ious(ev: EvalResult, dataset: Dataset) -> np.ndarray:
    if ev.boxes is None or dataset.boxes is None:
        raise ValueError("need two-pass boxes and ground-truth boxes")
    return np.array([box_iou(b, BBox(*(int(v) for v in gt), space="image"))
                     for b, gt in zip(ev.boxes, dataset.boxes)])


def alpha_sweep(model: GACNN, dataset: Dataset, alphas=ALPHAS) -> dict[float, EvalResult]:
    return {a: evaluate(model, dataset, "two-pass", alpha=a) for a in alphas}
