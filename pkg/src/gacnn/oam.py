"""Object localization from the enhanced last-stage features, and cropping for the fine pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class BBox:
    """Inclusive integer bounds."""
    row_min: int
    row_max: int
    col_min: int
    col_max: int
    space: str = "feature"

    def __post_init__(self):
        if self.row_min > self.row_max or self.col_min > self.col_max:
            raise ValueError(f"inverted box {self}")

    @property
    def height(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def width(self) -> int:
        return self.col_max - self.col_min + 1

    @property
    def area(self) -> int:
        return self.height * self.width

    def as_tuple(self) -> tuple[int, int, int, int]:
        return self.row_min, self.row_max, self.col_min, self.col_max

    def contains(self, other: "BBox") -> bool:
        return (self.row_min <= other.row_min and other.row_max <= self.row_max
                and self.col_min <= other.col_min and other.col_max <= self.col_max)


@dataclass
class AttentionMap:
    raw: np.ndarray
    normalized: np.ndarray
    channel: int
    source_stage: int | None = None


@dataclass
class ClipMask:
    mask: np.ndarray
    alpha: float


@dataclass
class LocalizationResult:
    attention: AttentionMap
    mask: ClipMask
    feature_box: BBox
    image_box: BBox
    crop: np.ndarray


def select_channel(features: np.ndarray, rule: str = "max") -> tuple[int, np.ndarray]:
    """Pick the channel of a C x h x w map holding the largest activation.

    ``rule="sum"`` ranks channels by total activation instead.  Ties go to the
    lowest channel index.
    """
    features = np.asarray(features)
    if features.ndim != 3 or features.shape[0] < 1:
        raise ValueError(f"expected a C x h x w feature map, got shape {features.shape}")
    flat = features.reshape(features.shape[0], -1)
    if rule == "max":
        score = flat.max(axis=1)
    elif rule == "sum":
        score = flat.sum(axis=1)
    else:
        raise ConfigError(f"unknown channel rule {rule!r}")
    ch = int(np.argmax(score))
    return ch, features[ch]


def normalize(attention: np.ndarray) -> np.ndarray:
    """Min-max rescale to [0, 1]; a constant map becomes all ones."""
    a = np.asarray(attention, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.ones_like(a)
    return (a - lo) / (hi - lo)


def clip_mask(normalized: np.ndarray, alpha: float) -> np.ndarray:
    """Cells strictly above ``alpha``."""
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"alpha must lie in [0, 1), got {alpha}")
    return np.asarray(normalized) > alpha


def bbox_from_mask(mask: np.ndarray) -> BBox:
    """Smallest axis-aligned box covering every positive cell."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("empty clip mask has no covering box")
    return BBox(int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1]), "feature")


def map_bbox_to_image(box: BBox, factor: int, image_extent: tuple[int, int]) -> BBox:
    """Each feature cell covers a factor x factor pixel block; clamp to the image."""
    if factor < 1:
        raise ConfigError(f"downsample factor must be >= 1, got {factor}")
    h, w = image_extent
    return BBox(
        min(box.row_min * factor, h - 1),
        min((box.row_max + 1) * factor - 1, h - 1),
        min(box.col_min * factor, w - 1),
        min((box.col_max + 1) * factor - 1, w - 1),
        "image",
    )


def resize_bilinear(image: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resize of a C x H x W array."""
    c, h, w = image.shape
    th, tw = target
    ys = np.linspace(0.0, h - 1, th) if th > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, tw) if tw > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    img = image.astype(np.float64, copy=False)
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(image.dtype, copy=False)


def crop_and_resize(image: np.ndarray, box: BBox, target: tuple[int, int]) -> np.ndarray:
    h, w = image.shape[1:]
    if box.row_min < 0 or box.col_min < 0 or box.row_max >= h or box.col_max >= w:
        raise ValueError(f"box {box.as_tuple()} outside image {h}x{w}")
    region = image[:, box.row_min:box.row_max + 1, box.col_min:box.col_max + 1]
    return resize_bilinear(region, target)


def localize_features(features: np.ndarray, image: np.ndarray, factor: int, alpha: float,
                      rule: str = "max", source_stage: int | None = None) -> LocalizationResult:
    """Localization pipeline for one image given its C x h x w localization features."""
    ch, raw = select_channel(features, rule)
    norm = normalize(raw)
    mask = clip_mask(norm, alpha)
    fbox = bbox_from_mask(mask)
    ibox = map_bbox_to_image(fbox, factor, image.shape[1:])
    crop = crop_and_resize(image, ibox, image.shape[1:])
    return LocalizationResult(AttentionMap(raw, norm, ch, source_stage), ClipMask(mask, alpha), fbox, ibox, crop)


def localize_batch(features: np.ndarray, images: np.ndarray, factor: int, alpha: float,
                   rule: str = "max") -> tuple[np.ndarray, list[BBox]]:
    """Crops (same shape as ``images``) and pixel boxes for a batch."""
    crops = np.empty_like(images)
    boxes = []
    for i in range(images.shape[0]):
        res = localize_features(features[i], images[i], factor, alpha, rule)
        crops[i] = res.crop
        boxes.append(res.image_box)
    return crops, boxes


def localize(image: np.ndarray, model, alpha: float | None = None) -> LocalizationResult:
    """Run ``model`` on one 3 x H x W image and localize its object."""
    alpha = model.config.oam.alpha if alpha is None else alpha
    image = np.asarray(image, dtype=model.dtype)
    _, feats = model.predict(image[None])
    return localize_features(feats[0], image, model.last_reduction, alpha,
                             model.config.oam.channel_rule, model.supervised_stages[-1])


def box_iou(a: BBox, b: BBox) -> float:
    r0, r1 = max(a.row_min, b.row_min), min(a.row_max, b.row_max)
    c0, c1 = max(a.col_min, b.col_min), min(a.col_max, b.col_max)
    inter = max(0, r1 - r0 + 1) * max(0, c1 - c0 + 1)
    return inter / (a.area + b.area - inter)
