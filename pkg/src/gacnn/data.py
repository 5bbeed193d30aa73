"""Synthetic fine-grained benchmark and directory-organized image loading."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .oam import BBox, resize_bilinear

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class Sample:
    image: np.ndarray
    label: int
    object_box: BBox | None = None
    glyph_center: tuple[int, int] | None = None
    image_id: str = ""


@dataclass
class Dataset:
    images: np.ndarray  # N x 3 x H x W, float32 in [0, 1]
    labels: np.ndarray  # N, int64
    class_names: list[str]
    ids: list[str]
    boxes: np.ndarray | None = None  # N x 4: row_min, row_max, col_min, col_max
    glyph_centers: np.ndarray | None = None  # N x 2
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __getitem__(self, i: int) -> Sample:
        box = BBox(*(int(v) for v in self.boxes[i]), space="image") if self.boxes is not None else None
        glyph = tuple(int(v) for v in self.glyph_centers[i]) if self.glyph_centers is not None else None
        return Sample(self.images[i], int(self.labels[i]), box, glyph, self.ids[i])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.images[idx], self.labels[idx], self.class_names, [self.ids[i] for i in idx],
            None if self.boxes is None else self.boxes[idx],
            None if self.glyph_centers is None else self.glyph_centers[idx],
        )


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 8
    image_size: int = 64
    glyph_size: int = 6
    train_per_class: int = 200
    test_per_class: int = 100
    seed: int = 0
    # ellipse semi-axes, pixels
    radius_range: tuple[int, int] = (14, 24)
    glyph_pixels: int = 14
    min_glyph_distance: int = 6
    # glyphs of random classes (independent of the label) scattered outside the object
    distractors: int = 2
    # ink is the underlying surface darkened by this fraction; 1.0 is black
    glyph_contrast: float = 0.7

    def validate(self) -> None:
        lo, hi = self.radius_range
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if not 0 < lo <= hi or 2 * hi + 2 > self.image_size:
            raise ConfigError(f"radius range {self.radius_range} does not fit a {self.image_size} image")
        if 4 * self.glyph_size >= 2 * lo + 1:
            raise ConfigError(f"glyph size {self.glyph_size} must stay below a quarter of the smallest "
                              f"object extent {2 * lo + 1}")
        if not 0.0 < self.glyph_contrast <= 1.0:
            raise ConfigError("glyph_contrast must lie in (0, 1]")
        if self.distractors < 0:
            raise ConfigError("distractors must be >= 0")
        if not 0 < self.glyph_pixels < self.glyph_size ** 2:
            raise ConfigError("glyph_pixels must lie strictly between 0 and glyph_size**2")


def _hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int((a != b).sum())


def make_glyphs(spec: SynthSpec) -> np.ndarray:
    """One binary pattern per class, kept apart from every other pattern and its mirror image.

    Mirrors count because horizontal flips are a training augmentation.
    """
    rng = np.random.default_rng([spec.seed, 0x9175])
    g = spec.glyph_size
    glyphs: list[np.ndarray] = []
    for _ in range(100_000):
        if len(glyphs) == spec.classes:
            break
        cand = np.zeros(g * g, dtype=bool)
        cand[rng.choice(g * g, spec.glyph_pixels, replace=False)] = True
        cand = cand.reshape(g, g)
        # every row and column touched keeps the pattern spread over the full footprint
        if not (cand.any(axis=0).all() and cand.any(axis=1).all()):
            continue
        variants = (cand, cand[:, ::-1])
        if all(_hamming(v, o) >= spec.min_glyph_distance for o in glyphs for v in variants) and \
                all(_hamming(v, o[:, ::-1]) >= spec.min_glyph_distance for o in glyphs for v in variants):
            glyphs.append(cand)
    if len(glyphs) < spec.classes:
        raise ConfigError(f"could not design {spec.classes} separable {g}x{g} glyphs")
    return np.stack(glyphs)


def _smooth_noise(rng, size: int, cells: int) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, size=(3, cells, cells))
    return resize_bilinear(coarse, (size, size))


def _stamp(img: np.ndarray, glyph: np.ndarray, r0: int, c0: int, contrast: float, rng) -> None:
    g = glyph.shape[0]
    patch = img[:, r0:r0 + g, c0:c0 + g]
    ink = patch * (1.0 - contrast) + np.array([0.1, 0.1, 0.16])[:, None, None] * contrast
    ink = ink + rng.normal(0.0, 0.03, size=(3, g, g))
    img[:, r0:r0 + g, c0:c0 + g] = np.where(glyph[None], ink, patch)


def render_sample(spec: SynthSpec, glyphs: np.ndarray, label: int, rng: np.random.Generator):
    """One image with its object box and glyph center."""
    n = spec.image_size
    g = spec.glyph_size
    bg = 0.25 + 0.35 * _smooth_noise(rng, n, 6) + rng.normal(0.0, 0.04, size=(3, n, n))

    ry, rx = rng.integers(spec.radius_range[0], spec.radius_range[1] + 1, size=2)
    cy = rng.uniform(ry + 1, n - ry - 2)
    cx = rng.uniform(rx + 1, n - rx - 2)
    yy, xx = np.mgrid[0:n, 0:n]
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    base = np.array([0.85, 0.62, 0.3]) + rng.uniform(-0.05, 0.05, size=3)
    obj = base[:, None, None] + 0.06 * (_smooth_noise(rng, n, 8) - 0.5) + rng.normal(0.0, 0.03, size=(3, n, n))
    img = np.where(inside[None], obj, bg)

    # glyph footprint must sit strictly inside the ellipse
    for _ in range(1000):
        r0 = int(rng.integers(int(cy - ry), int(cy + ry) - g + 2))
        c0 = int(rng.integers(int(cx - rx), int(cx + rx) - g + 2))
        if 0 <= r0 and r0 + g <= n and 0 <= c0 and c0 + g <= n and inside[r0:r0 + g, c0:c0 + g].all():
            break
    else:  # pragma: no cover - radius_range validation makes this unreachable
        raise ConfigError("glyph does not fit inside the object")
    _stamp(img, glyphs[label], r0, c0, spec.glyph_contrast, rng)

    # distractors go where their footprint, grown by one pixel, misses the object
    halo = np.zeros((n + 2, n + 2), dtype=bool)
    halo[1:-1, 1:-1] = inside
    for _ in range(spec.distractors):
        cls = int(rng.integers(spec.classes))
        for _ in range(50):
            dr, dc = (int(v) for v in rng.integers(0, n - g + 1, size=2))
            if not halo[dr:dr + g + 2, dc:dc + g + 2].any():
                _stamp(img, glyphs[cls], dr, dc, spec.glyph_contrast, rng)
                break

    rows = np.flatnonzero(inside.any(axis=1))
    cols = np.flatnonzero(inside.any(axis=0))
    box = (rows[0], rows[-1], cols[0], cols[-1])
    center = (r0 + g // 2, c0 + g // 2)
    return np.clip(img, 0.0, 1.0).astype(np.float32), box, center


def _split(spec: SynthSpec, glyphs: np.ndarray, split: str, per_class: int) -> Dataset:
    split_id = {"train": 0, "test": 1}[split]
    count = per_class * spec.classes
    n = spec.image_size
    images = np.empty((count, 3, n, n), dtype=np.float32)
    labels = np.arange(count, dtype=np.int64) % spec.classes
    boxes = np.empty((count, 4), dtype=np.int64)
    centers = np.empty((count, 2), dtype=np.int64)
    for i in range(count):
        rng = np.random.default_rng([spec.seed, split_id, i])
        images[i], boxes[i], centers[i] = render_sample(spec, glyphs, int(labels[i]), rng)
    names = [f"class_{c:02d}" for c in range(spec.classes)]
    ids = [f"{split}/{names[labels[i]]}/{i:05d}" for i in range(count)]
    return Dataset(images, labels, names, ids, boxes, centers)


def generate_synthetic(spec: SynthSpec) -> tuple[Dataset, Dataset]:
    """Balanced train/test splits; a pure function of ``spec``."""
    spec.validate()
    glyphs = make_glyphs(spec)
    return (_split(spec, glyphs, "train", spec.train_per_class),
            _split(spec, glyphs, "test", spec.test_per_class))


def synth_spec_from_config(cfg) -> SynthSpec:
    d = cfg.data
    return SynthSpec(d.classes, d.image_size, d.glyph_size, d.train_per_class, d.test_per_class, d.seed,
                     distractors=d.distractors, glyph_contrast=d.glyph_contrast,
                     min_glyph_distance=d.glyph_distance)


def _load_files(entries: list[tuple[Path, int, str]], size: int) -> tuple[list[np.ndarray], list[int], list[str], int]:
    from .images import read_image

    images, labels, ids, skipped = [], [], [], 0
    for path, label, image_id in entries:
        try:
            img = read_image(path)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            skipped += 1
            continue
        if img.shape[1:] != (size, size):
            img = resize_bilinear(img, (size, size))
        images.append(np.clip(img, 0.0, 1.0).astype(np.float32))
        labels.append(label)
        ids.append(image_id)
    return images, labels, ids, skipped


def load_directory_dataset(root: str | Path, image_size: int = 64) -> Dataset:
    """Load ``root/<class_name>/<image files>`` (or a ``labels.tsv`` index when present).

    Class indices follow sorted subdirectory names; files are read in sorted
    order so the result does not depend on directory enumeration order.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    index = root / "labels.tsv"
    if index.exists():
        return _load_indexed(root, index, image_size)

    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ConfigError(f"dataset root {root} has no class subdirectories")
    entries = []
    for label, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ConfigError(f"class directory {d} contains no images")
        entries += [(f, label, f"{d.name}/{f.name}") for f in files]
    images, labels, ids, skipped = _load_files(entries, image_size)
    if not images:
        raise ConfigError(f"no readable images under {root}")
    return Dataset(np.stack(images), np.asarray(labels, dtype=np.int64),
                   [d.name for d in class_dirs], ids, skipped=skipped)


def _load_indexed(root: Path, index: Path, image_size: int) -> Dataset:
    rows = [line.split("\t") for line in index.read_text().splitlines() if line.strip()]
    entries = [(root / rel, int(lbl), rel) for rel, lbl in rows]
    if not entries:
        raise ConfigError(f"{index} lists no images")
    images, labels, ids, skipped = _load_files(entries, image_size)
    if not images:
        raise ConfigError(f"no readable images under {root}")
    classes = max(int(l) for _, l in rows) + 1
    names = [f"class_{c:02d}" for c in range(classes)]
    boxes = centers = None
    meta = root / "meta.tsv"
    if meta.exists():
        table = {}
        for line in meta.read_text().splitlines()[1:]:
            parts = line.split("\t")
            table[parts[0]] = [int(v) for v in parts[1:]]
        if all(i in table for i in ids):
            boxes = np.asarray([table[i][:4] for i in ids], dtype=np.int64)
            centers = np.asarray([table[i][4:6] for i in ids], dtype=np.int64)
    return Dataset(np.stack(images), np.asarray(labels, dtype=np.int64), names, ids, boxes, centers, skipped)


def write_dataset(ds: Dataset, out: str | Path) -> None:
    """Materialize as PPM files plus ``labels.tsv`` (and ``meta.tsv`` when boxes are known)."""
    from .images import write_ppm

    out = Path(out)
    rels = []
    for i in range(len(ds)):
        rel = f"{ds.class_names[ds.labels[i]]}/{i:05d}.ppm"
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        write_ppm(out / rel, ds.images[i])
        rels.append(rel)
    (out / "labels.tsv").write_text("".join(f"{r}\t{int(l)}\n" for r, l in zip(rels, ds.labels)))
    if ds.boxes is not None:
        lines = ["image_id\trow_min\trow_max\tcol_min\tcol_max\tglyph_row\tglyph_col\n"]
        for r, b, c in zip(rels, ds.boxes, ds.glyph_centers):
            lines.append("\t".join([r, *map(str, b), *map(str, c)]) + "\n")
        (out / "meta.tsv").write_text("".join(lines))


def augment(images: np.ndarray, rng: np.random.Generator, flip: bool = True, pad: int = 0) -> np.ndarray:
    """Random horizontal flips and zero-padded random shifts; values stay in [0, 1]."""
    out = images.copy()
    n, _, h, w = images.shape
    if flip:
        which = rng.random(n) < 0.5
        out[which] = out[which, :, :, ::-1]
    if pad > 0:
        padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
        for i, (dy, dx) in enumerate(offs):
            out[i] = padded[i, :, dy:dy + h, dx:dx + w]
    return out
