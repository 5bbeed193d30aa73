"""Acceptance criteria 1-9, one test each; every test records a PASS/FAIL line.

Criteria 4-7 train the desk benchmark models (cached on disk by config and
source hash, see ``gacnn.experiments``); a cold run takes roughly 40 minutes
on one CPU core.
"""
import functools
import struct
import time

import numpy as np
import pytest

from conftest import record_criterion
from gacnn import checkpoint
from gacnn.cli import main
from gacnn.data import generate_synthetic, synth_spec_from_config
from gacnn.config import TrainConfig
from gacnn.errors import CheckpointError
from gacnn.experiments import ALPHAS, alpha_sweep, localization_ious, run
from gacnn.oam import bbox_from_mask, clip_mask, normalize
from gacnn.pooling import gap, gmp, gtkp
from gacnn.tensors import Tensor
from gacnn.training import OptimState, cosine_lr, evaluate, sgd_step
from gacnn.verify import run_gradcheck
from oracles import min_cover_rectangle_vec

TIME_BUDGET = 15 * 60  # seconds per benchmark training run


@functools.lru_cache(maxsize=None)
def benchmark_data():
    return generate_synthetic(synth_spec_from_config(TrainConfig()))


@functools.lru_cache(maxsize=None)
def trained(name):
    return run(name, data=benchmark_data())


@functools.lru_cache(maxsize=None)
def coarse_eval(name):
    return evaluate(trained(name).model, benchmark_data()[1], "coarse")


@functools.lru_cache(maxsize=None)
def sweep():
    return alpha_sweep(trained("gsc_oam").model, benchmark_data()[1], ALPHAS)


def test_criterion_1_gradient_integrity():
    started = time.perf_counter()
    reports = run_gradcheck(tolerance=1e-6)
    seconds = time.perf_counter() - started
    worst = max(reports, key=lambda r: r.max_rel_error)
    ok = all(r.passed for r in reports) and seconds < 60
    record_criterion(1, "gradient integrity", ok,
                     f"{sum(r.passed for r in reports)}/{len(reports)} ops within 1e-6, "
                     f"worst {worst.name} {worst.max_rel_error:.2e}, {seconds:.1f}s")
    assert ok, "\n".join(r.line() for r in reports)


def test_criterion_2_pooling_reductions():
    rng = np.random.default_rng(2)
    mismatches, order_violations, n = 0, 0, 1000
    for _ in range(n):
        c, h, w = rng.integers(1, 6), rng.integers(1, 9), rng.integers(1, 9)
        x = Tensor(rng.normal(size=(c, h, w)) * rng.uniform(0.1, 10))
        hw = int(h * w)
        mismatches += not np.array_equal(gtkp(x, 1).data, gmp(x).data)
        mismatches += not np.array_equal(gtkp(x, hw).data, gap(x).data)
        v = gtkp(x, int(rng.integers(1, hw + 1))).data
        order_violations += int(((gap(x).data > v) | (v > gmp(x).data)).sum())
    ok = mismatches == 0 and order_violations == 0
    record_criterion(2, "pooling reductions", ok,
                     f"{n} maps, {mismatches} reduction mismatches, {order_violations} ordering violations")
    assert ok


def test_criterion_3_oam_correctness():
    rng = np.random.default_rng(3)
    alphas = [round(0.1 * i, 1) for i in range(10)]
    empty = wrong_box = non_monotone = 0
    worst_affine = 0.0
    n = 1000
    for _ in range(n):
        h, w = rng.integers(1, 8), rng.integers(1, 8)
        raw = rng.normal(size=(h, w))
        if rng.random() < 0.2:  # include maps with ties
            raw = np.round(raw)
        a, b = rng.uniform(0.01, 100), rng.uniform(-100, 100)
        worst_affine = max(worst_affine, float(np.abs(normalize(a * raw + b) - normalize(raw)).max()))
        norm = normalize(raw)
        prev_mask = prev_box = None
        for alpha in alphas:
            mask = clip_mask(norm, alpha)
            if not mask.any():
                empty += 1
                continue
            box = bbox_from_mask(mask)
            wrong_box += box.as_tuple() != min_cover_rectangle_vec(mask)
            if prev_mask is not None:
                non_monotone += bool((mask & ~prev_mask).any()) or not prev_box.contains(box)
            prev_mask, prev_box = mask, box
    example_norm = normalize(np.array([[1.0, 3.0], [5.0, 9.0]]))
    example_mask = clip_mask(example_norm, 0.3)
    examples = (np.array_equal(example_norm, [[0.0, 0.25], [0.5, 1.0]])
                and np.array_equal(example_mask, [[False, False], [True, True]]))
    ok = empty == 0 and wrong_box == 0 and non_monotone == 0 and worst_affine <= 1e-6 and examples
    record_criterion(3, "OAM correctness", ok,
                     f"{n} maps x {len(alphas)} alphas: {empty} empty masks, {wrong_box} boxes off the oracle, "
                     f"{non_monotone} monotonicity breaks, affine error {worst_affine:.1e}, "
                     f"worked examples {'exact' if examples else 'WRONG'}")
    assert ok


def test_criterion_4_gsc_effectiveness():
    single, gsc = coarse_eval("single").accuracy, coarse_eval("gsc").accuracy
    two_pass = sweep()[trained("gsc_oam").config.oam.alpha].accuracy
    classes = trained("gsc").config.data.classes
    times = {n: trained(n).seconds for n in ("single", "gsc", "gsc_oam")}
    a = single > 1.0 / classes
    b = gsc - single >= 0.05
    c = two_pass >= gsc
    in_budget = all(t < TIME_BUDGET for t in times.values())
    ok = a and b and c and in_budget
    record_criterion(4, "GSC effectiveness", ok,
                     f"(a) S=1 {single:.4f} vs chance {1 / classes:.4f} {'ok' if a else 'FAIL'}; "
                     f"(b) S=3 {gsc:.4f}, gain {100 * (gsc - single):+.2f}pp {'ok' if b else 'FAIL'}; "
                     f"(c) GSC+OAM two-pass {two_pass:.4f} vs GSC coarse {gsc:.4f} {'ok' if c else 'FAIL'}; "
                     f"train time {', '.join(f'{k} {v:.0f}s' for k, v in times.items())}")
    assert ok


def test_criterion_5_pooling_ordering():
    acc = {m: coarse_eval(n).accuracy for m, n in (("gtkp", "gsc"), ("gmp", "gsc_gmp"), ("gap", "gsc_gap"))}
    ok = acc["gtkp"] >= acc["gap"]
    ranking = " > ".join(f"{m} {acc[m]:.4f}" for m in sorted(acc, key=acc.get, reverse=True))
    record_criterion(5, "pooling ordering", ok, f"{ranking} (gate: gtkp >= gap)")
    assert ok


def test_criterion_6_alpha_robustness():
    accs = {a: ev.accuracy for a, ev in sweep().items()}
    spread = max(accs.values()) - min(accs.values())
    ok = spread <= 0.05
    record_criterion(6, "alpha robustness", ok,
                     ", ".join(f"a={a} {v:.4f}" for a, v in accs.items()) + f"; spread {100 * spread:.2f}pp")
    assert ok


def test_criterion_7_localization_quality():
    model = trained("gsc_oam")
    ev = sweep()[model.config.oam.alpha]
    ious = localization_ious(ev, benchmark_data()[1])
    frac = float((ious >= 0.3).mean())
    ok = frac >= 0.6
    record_criterion(7, "localization quality", ok,
                     f"IoU >= 0.3 on {100 * frac:.1f}% of {len(ious)} test images (mean IoU {ious.mean():.3f})")
    assert ok


def test_criterion_8_scheduler_and_optimizer():
    cos = (cosine_lr(0.02, 0, 60) == 0.02 and cosine_lr(0.02, 60, 60) == 0.0
           and cosine_lr(0.02, 30, 60) == 0.01)
    w = {"w": np.zeros(1, dtype=np.float64)}
    state = OptimState(momentum=0.9, weight_decay=0.0)
    steps = []
    for _ in range(2):
        sgd_step(w, {"w": np.ones(1)}, state, 0.1)
        steps.append((float(state.velocity["w"][0]), float(w["w"][0])))
    # the same two steps evaluated by hand in float64
    v1 = 0.9 * 0.0 + 1.0
    w1 = 0.0 - 0.1 * v1
    v2 = 0.9 * v1 + 1.0
    w2 = w1 - 0.1 * v2
    exact = steps == [(v1, w1), (v2, w2)]
    decimal = np.allclose([v1, w1, v2, w2], [1.0, -0.1, 1.9, -0.29], rtol=0, atol=1e-15)
    ok = cos and exact and decimal
    record_criterion(8, "scheduler and optimizer", ok,
                     f"cosine endpoints/midpoint {'exact' if cos else 'WRONG'}; "
                     f"momentum steps {steps} {'match' if exact else 'DIFFER FROM'} the float64 oracle")
    assert ok


def test_criterion_9_determinism_and_persistence(tmp_path):
    small = ["--override", "data.train_per_class=20", "--override", "data.test_per_class=10",
             "--override", "training.epochs=2"]
    outs = []
    for name in ("a", "b"):
        assert main(["train", *small, "--out", str(tmp_path / name)]) == 0
        outs.append(tmp_path / name)
    same_metrics = (outs[0] / "metrics.tsv").read_bytes() == (outs[1] / "metrics.tsv").read_bytes()

    model, state, _ = checkpoint.load(outs[0] / "model.gkpt")
    again = checkpoint.save(model, state, tmp_path / "again.gkpt")
    model2, state2, _ = checkpoint.load(again)
    roundtrip = all(np.array_equal(a.data, b.data)
                    for (_, a), (_, b) in zip(model.named_parameters(), model2.named_parameters()))
    roundtrip &= all(np.array_equal(a, b) for (_, a), (_, b) in zip(model.named_buffers(), model2.named_buffers()))
    roundtrip &= (outs[0] / "model.gkpt").read_bytes() == again.read_bytes()

    raw = again.read_bytes()
    (tmp_path / "cut.gkpt").write_bytes(raw[:len(raw) // 2])
    (tmp_path / "cut.gkpt.cfg").write_text((tmp_path / "again.gkpt.cfg").read_text())
    try:
        checkpoint.load(tmp_path / "cut.gkpt")
        truncation = "accepted"
    except CheckpointError as exc:
        truncation = str(exc)
    rejected = "truncated" in truncation and "found" in truncation and "expected" in truncation
    ok = same_metrics and roundtrip and rejected
    record_criterion(9, "determinism and persistence", ok,
                     f"metrics files {'byte-equal' if same_metrics else 'DIFFER'}; "
                     f"round-trip {'bit-exact' if roundtrip else 'NOT exact'}; truncated file: {truncation}")
    assert ok
