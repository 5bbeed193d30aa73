"""Command-line entry point: train, eval, locate, viz, gradcheck, synth."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import TrainConfig, load_config
from .data import Dataset, generate_synthetic, load_directory_dataset, synth_spec_from_config, write_dataset
from .errors import CheckpointError, ConfigError
from .images import GREEN, RED, blend, draw_box, heatmap, write_image
from .oam import BBox, localize_features, normalize, resize_bilinear
from .tensors import no_grad
from .training import evaluate, train
from .verify import run_gradcheck

log = logging.getLogger("gacnn")


def _dataset_for(config: TrainConfig, spec: str, split: str = "test") -> Dataset:
    if spec == "synth":
        tr, te = generate_synthetic(synth_spec_from_config(config))
        return tr if split == "train" else te
    return load_directory_dataset(spec, config.data.image_size)


def _limit(ds: Dataset, limit: int | None) -> Dataset:
    return ds if not limit or limit >= len(ds) else ds.subset(np.arange(limit))


def _safe_id(image_id: str) -> str:
    return image_id.replace("/", "_").replace("\\", "_").rsplit(".", 1)[0]


def cmd_train(args) -> int:
    config = load_config(args.config, args.override)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if config.data.source == "synth":
        train_set, test_set = generate_synthetic(synth_spec_from_config(config))
    else:
        root = Path(config.data.source)
        train_set = load_directory_dataset(root / "train", config.data.image_size)
        test_dir = root / "test"
        test_set = load_directory_dataset(test_dir, config.data.image_size) if test_dir.is_dir() else None
        if train_set.num_classes != config.data.classes:
            config = config.with_overrides({"data.classes": str(train_set.num_classes)})

    every = config.training.checkpoint_every

    def on_epoch_end(m, model, state):
        if every and (m.epoch + 1) % every == 0:
            checkpoint.save(model, state, out / f"epoch_{m.epoch + 1:03d}.gkpt")

    result = train(config, train_set, test_set, on_epoch_end=on_epoch_end)
    checkpoint.save(result.model, result.state, out / "model.gkpt")
    (out / "metrics.tsv").write_text(result.metrics_text())
    if result.metrics:
        last = result.metrics[-1]
        print(f"final epoch {last.epoch}: train loss {last.train_loss:.4f}, accuracy {last.accuracy:.4f}")
    print(f"wrote {out / 'model.gkpt'} and {out / 'metrics.tsv'}")
    return 0


def _load(args):
    model, _, _ = checkpoint.load(args.ckpt, allow_config_mismatch=getattr(args, "force", False))
    return model


def cmd_eval(args) -> int:
    model = _load(args)
    ds = _limit(_dataset_for(model.config, args.data, args.split), args.limit)
    res = evaluate(model, ds, "two-pass" if args.two_pass else "coarse", alpha=args.alpha)
    for name, acc in zip(res.head_names, res.head_accuracies):
        print(f"{name}\t{acc:.6f}")
    print(f"average\t{res.accuracy:.6f}")
    return 0


def cmd_locate(args) -> int:
    model = _load(args)
    alpha = model.config.oam.alpha if args.alpha is None else args.alpha
    ds = _limit(_dataset_for(model.config, args.data, args.split), args.limit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.overlay:
        (out / "overlays").mkdir(exist_ok=True)
    header = "image_id\trow_min\trow_max\tcol_min\tcol_max\talpha\n"
    lines, feature_lines = [header], [header]
    for start in range(0, len(ds), 50):
        x = ds.images[start:start + 50].astype(model.dtype)
        _, feats = model.predict(x)
        for j in range(len(x)):
            i = start + j
            res = localize_features(feats[j], x[j], model.last_reduction, alpha, model.config.oam.channel_rule)
            box = res.image_box
            lines.append("\t".join([ds.ids[i], *map(str, box.as_tuple()), repr(alpha)]) + "\n")
            feature_lines.append("\t".join([ds.ids[i], *map(str, res.feature_box.as_tuple()), repr(alpha)]) + "\n")
            if args.overlay:
                img = draw_box(ds.images[i], box, RED)
                if ds.boxes is not None:
                    img = draw_box(img, BBox(*(int(v) for v in ds.boxes[i]), space="image"), GREEN)
                write_image(out / "overlays" / f"{_safe_id(ds.ids[i])}.ppm", img)
    (out / "boxes.tsv").write_text("".join(lines))
    (out / "feature_boxes.tsv").write_text("".join(feature_lines))
    print(f"wrote {len(ds)} box records to {out / 'boxes.tsv'}")
    return 0


def stage_heatmaps(model, images: np.ndarray) -> list[np.ndarray]:
    """Per supervised stage, N x 3 x H x W heatmaps blended over the inputs."""
    with no_grad():
        pyramid = model.forward(images.astype(model.dtype)).pyramid
    h, w = images.shape[2:]
    out = []
    for s in range(pyramid.S):
        fmap = pyramid.enhanced_chw(s).mean(axis=1)
        frames = []
        for i in range(len(images)):
            norm = normalize(fmap[i])
            up = resize_bilinear(norm[None], (h, w))[0]
            frames.append(blend(images[i], heatmap(up), 0.5))
        out.append(np.stack(frames))
    return out


def cmd_viz(args) -> int:
    model = _load(args)
    ds = _limit(_dataset_for(model.config, args.data, args.split), args.limit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.set_mode("inference")
    count = 0
    for start in range(0, len(ds), 50):
        x = ds.images[start:start + 50]
        maps = stage_heatmaps(model, x)
        for stage, frames in zip(model.supervised_stages, maps):
            for j, frame in enumerate(frames):
                write_image(out / f"{_safe_id(ds.ids[start + j])}_stage{stage}.ppm", frame)
                count += 1
    print(f"wrote {count} heatmaps to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    reports = run_gradcheck(args.tolerance, corrupt=args.corrupt)
    for r in reports:
        print(r.line())
    failed = [r.name for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} gradient checks passed")
    return 1 if failed else 0


def cmd_synth(args) -> int:
    config = load_config(args.config, args.override)
    tr, te = generate_synthetic(synth_spec_from_config(config))
    out = Path(args.out)
    write_dataset(tr, out / "train")
    write_dataset(te, out / "test")
    print(f"wrote {len(tr)} train and {len(te)} test images to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gacnn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint plus metrics")
    t.add_argument("--config", default=None)
    t.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    def data_cmd(name, fn, help_):
        c = sub.add_parser(name, help=help_)
        c.add_argument("--ckpt", required=True)
        c.add_argument("--data", default="synth", help="dataset directory or 'synth'")
        c.add_argument("--split", default="test", choices=("train", "test"), help="split used with --data synth")
        c.add_argument("--limit", type=int, default=None)
        c.add_argument("--force", action="store_true", help="accept a config hash mismatch")
        c.set_defaults(fn=fn)
        return c

    e = data_cmd("eval", cmd_eval, "report per-head and averaged accuracy")
    e.add_argument("--two-pass", action="store_true")
    e.add_argument("--alpha", type=float, default=None)
    lo = data_cmd("locate", cmd_locate, "write object boxes (and overlays)")
    lo.add_argument("--alpha", type=float, default=None)
    lo.add_argument("--overlay", action="store_true")
    lo.add_argument("--out", default="locate")
    v = data_cmd("viz", cmd_viz, "write per-stage heatmaps")
    v.add_argument("--out", default="viz")

    g = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    g.add_argument("--tolerance", type=float, default=1e-6)
    g.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    g.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("synth", help="write the synthetic dataset as PPM files")
    s.add_argument("--config", default=None)
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
