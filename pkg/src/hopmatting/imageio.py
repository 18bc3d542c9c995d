"""PNG reading and writing for images, alpha mattes and trimaps.

Images are 8-bit RGB; alphas and trimaps are 8- or 16-bit grayscale. In
memory everything is float64 in [0, 1] except trimaps, which stay as uint8
labels {0, 128, 255}. Quantisation happens here and nowhere else.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .attention.posenc import BG, FG, UNKNOWN


class ImageFormatError(ValueError):
    """A file exists but is not a PNG of the expected kind."""


def _open(path) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: not a readable PNG ({exc})") from None
    if img.format != "PNG":
        raise ImageFormatError(f"{path}: expected PNG, found {img.format}")
    return img


def _gray_levels(img: Image.Image, path) -> tuple[np.ndarray, int]:
    """Integer gray values and their full-scale maximum (255 or 65535)."""
    if img.mode == "L":
        return np.asarray(img, dtype=np.int64), 255
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.int64)
        if arr.min() < 0 or arr.max() > 65535:
            raise ImageFormatError(f"{path}: gray values outside 16-bit range")
        return arr, 65535
    if img.mode == "1":
        return np.asarray(img.convert("L"), dtype=np.int64), 255
    raise ImageFormatError(f"{path}: expected 8- or 16-bit grayscale, got mode {img.mode}")


def read_rgb(path) -> np.ndarray:
    img = _open(path)
    if img.mode not in ("RGB", "RGBA", "L", "P"):
        raise ImageFormatError(f"{path}: expected an 8-bit RGB PNG, got mode {img.mode}")
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def read_alpha(path) -> np.ndarray:
    img = _open(path)
    levels, top = _gray_levels(img, path)
    return levels.astype(np.float64) / top


def read_trimap(path) -> np.ndarray:
    img = _open(path)
    levels, top = _gray_levels(img, path)
    if top == 65535:
        if np.any(levels % 257):
            raise ImageFormatError(f"{path}: 16-bit trimap values must be multiples of 257")
        levels = levels // 257
    bad = ~np.isin(levels, (BG, UNKNOWN, FG))
    if bad.any():
        vals = np.unique(levels[bad])[:5].tolist()
        raise ImageFormatError(f"{path}: trimap values must be 0, 128 or 255; found {vals}")
    return levels.astype(np.uint8)


def to_uint8(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantise non-finite values")
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def _save(img: Image.Image, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed encoder settings keep output bytes reproducible
    img.save(path, format="PNG", optimize=False, compress_level=6)


def write_rgb(path, img) -> None:
    arr = to_uint8(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"RGB image must be H x W x 3, got {arr.shape}")
    _save(Image.fromarray(arr), path)


def write_alpha(path, alpha, bits: int = 8) -> None:
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"alpha must be H x W, got {a.shape}")
    if bits == 8:
        _save(Image.fromarray(to_uint8(a)), path)
    elif bits == 16:
        q = np.round(np.clip(a, 0.0, 1.0) * 65535.0).astype(np.uint16)
        _save(Image.fromarray(q), path)
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")


def write_trimap(path, trimap) -> None:
    t = np.asarray(trimap)
    bad = ~np.isin(t, (BG, UNKNOWN, FG))
    if bad.any():
        raise ValueError(f"trimap labels must be 0, 128 or 255; found {np.unique(t[bad])[:5].tolist()}")
    _save(Image.fromarray(t.astype(np.uint8)), path)
