"""Image file I/O (binary PPM natively, other formats through Pillow) and overlay rendering."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .oam import BBox

RED = (1.0, 0.0, 0.0)
GREEN = (0.0, 1.0, 0.0)


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_ppm(path: str | Path) -> np.ndarray:
    """Binary P6 file -> float32 array 3 x H x W in [0, 1]."""
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {magic!r})")
    w, pos = _read_token(data, pos)
    h, pos = _read_token(data, pos)
    maxval, pos = _read_token(data, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * 3 * dtype.itemsize
    raw = data[pos:pos + need]
    if len(raw) != need:
        raise ValueError(f"{path}: expected {need} pixel bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=dtype).reshape(h, w, 3)
    return (arr.astype(np.float32) / maxval).transpose(2, 0, 1).copy()


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    c, h, w = image.shape
    if c != 3:
        raise ValueError(f"PPM needs 3 channels, got {c}")
    pix = to_uint8(image).transpose(1, 2, 0)
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pix.tobytes())


def read_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - Pillow is optional
        raise ValueError(f"{path}: only PPM is supported without Pillow") from exc
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def write_image(path: str | Path, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        write_ppm(path, image)
        return
    from PIL import Image

    Image.fromarray(to_uint8(image).transpose(1, 2, 0)).save(path)


def draw_box(image: np.ndarray, box: BBox, color=RED) -> np.ndarray:
    """Copy of ``image`` with a 1-pixel rectangle outline."""
    out = image.copy()
    col = np.asarray(color, dtype=out.dtype)[:, None]
    r0, r1, c0, c1 = box.as_tuple()
    out[:, r0, c0:c1 + 1] = col
    out[:, r1, c0:c1 + 1] = col
    out[:, r0:r1 + 1, c0] = col
    out[:, r0:r1 + 1, c1] = col
    return out


def heatmap(values: np.ndarray) -> np.ndarray:
    """Linear blue -> red ramp for values in [0, 1]; returns 3 x H x W."""
    v = np.clip(np.asarray(values, dtype=np.float32), 0.0, 1.0)
    return np.stack([v, np.zeros_like(v), 1.0 - v])


def blend(image: np.ndarray, overlay: np.ndarray, weight: float = 0.5) -> np.ndarray:
    return (1.0 - weight) * image + weight * overlay
