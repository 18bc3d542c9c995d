"""Compositing, resampling, interpolation augmentation and synthetic samples."""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import ndimage
from skimage import draw

from .attention.posenc import BG, FG, UNKNOWN

FG_THRESHOLD = 0.995
BG_THRESHOLD = 0.005
CUBIC_A = -0.5
# synthetic trimaps wider than this are redrawn
MAX_UNKNOWN_FRACTION = 0.5


class InterpMethod(str, enum.Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"
    BICUBIC = "cubic"

    @classmethod
    def parse(cls, name: "str | InterpMethod") -> "InterpMethod":
        if isinstance(name, InterpMethod):
            return name
        key = name.strip().lower()
        aliases = {"bicubic": "cubic", "linear": "bilinear", "nn": "nearest"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown interpolation method {name!r}") from None


ALL_METHODS = (InterpMethod.NEAREST, InterpMethod.BILINEAR, InterpMethod.BICUBIC)


@dataclass
class CompSample:
    foreground: np.ndarray
    background: np.ndarray
    alpha: np.ndarray
    trimap: np.ndarray
    composite: np.ndarray


def composite(fg, bg, alpha) -> np.ndarray:
    """Convex per-pixel blend ``alpha * fg + (1 - alpha) * bg``."""
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if fg.shape != bg.shape:
        raise ValueError(f"foreground {fg.shape} and background {bg.shape} differ in size")
    if alpha.shape != fg.shape[:2]:
        raise ValueError(f"alpha {alpha.shape} does not match image size {fg.shape[:2]}")
    if alpha.size and (alpha.min() < 0.0 or alpha.max() > 1.0):
        raise ValueError("alpha values must lie in [0, 1]")
    a = alpha[..., None] if fg.ndim == 3 else alpha
    return a * fg + (1.0 - a) * bg


def _cubic(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    a = CUBIC_A
    return np.where(
        t <= 1.0,
        (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0,
        np.where(t < 2.0, a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a, 0.0),
    )


@lru_cache(maxsize=256)
def _weights(n_in: int, n_out: int, method: InterpMethod) -> np.ndarray:
    """Dense (n_out x n_in) resampling matrix along one axis."""
    m = np.zeros((n_out, n_in))
    o = np.arange(n_out)
    if method is InterpMethod.NEAREST:
        # corner-aligned floor mapping, as in the common INTER_NEAREST resizer
        src = np.minimum((o * n_in) // n_out, n_in - 1)
        m[o, src] = 1.0
        return m
    x = (o + 0.5) * (n_in / n_out) - 0.5
    x0 = np.floor(x).astype(int)
    t = x - x0
    if method is InterpMethod.BILINEAR:
        taps = [(0, 1.0 - t), (1, t)]
    else:
        taps = [(j, _cubic(t - j)) for j in (-1, 0, 1, 2)]
    for off, wgt in taps:
        np.add.at(m, (o, np.clip(x0 + off, 0, n_in - 1)), wgt)
    return m


def _target(shape, size, scale) -> tuple[int, int]:
    h, w = shape[:2]
    if size is not None:
        th, tw = int(size[0]), int(size[1])
    elif scale is not None:
        sy, sx = (scale, scale) if np.isscalar(scale) else scale
        th, tw = int(round(h * sy)), int(round(w * sx))
    else:
        raise ValueError("resize needs a target size or a scale")
    if th < 1 or tw < 1:
        raise ValueError(f"degenerate resize target {th}x{tw}")
    return th, tw


def resize(img, size: Sequence[int] | None = None, method="bilinear", scale=None) -> np.ndarray:
    """Separable resampling of an H x W (x C) image.

    Bilinear and bicubic sample at half-pixel centres with border clamping;
    bicubic uses the Catmull-Rom kernel.
    """
    img = np.asarray(img, dtype=np.float64)
    method = InterpMethod.parse(method)
    th, tw = _target(img.shape, size, scale)
    wr = _weights(img.shape[0], th, method)
    wc = _weights(img.shape[1], tw, method)
    out = np.tensordot(wr, img, axes=(1, 0))
    out = np.tensordot(wc, out, axes=(1, 1))
    return np.swapaxes(out, 0, 1)


def resize_labels(labels, size: Sequence[int]) -> np.ndarray:
    """Nearest-neighbour resize for categorical maps (keeps dtype)."""
    labels = np.asarray(labels)
    th, tw = int(size[0]), int(size[1])
    h, w = labels.shape[:2]
    rows = np.minimum((np.arange(th) * h) // th, h - 1)
    cols = np.minimum((np.arange(tw) * w) // tw, w - 1)
    return labels[rows][:, cols]


def random_interp(rng: np.random.Generator, methods: Sequence = ALL_METHODS) -> InterpMethod:
    """Draw one interpolation method uniformly from ``methods``."""
    methods = [InterpMethod.parse(m) for m in methods]
    return methods[int(rng.integers(len(methods)))]


def roundtrip(img, factor: float = 1.5, method="cubic") -> np.ndarray:
    """Upsample by ``factor`` then resize back to the original size with the same method."""
    if factor <= 1.0:
        raise ValueError("round-trip factor must exceed 1")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    up = resize(img, (int(round(h * factor)), int(round(w * factor))), method)
    return resize(up, (h, w), method)


def make_trimap(alpha, rng: np.random.Generator, radius: int | None = None) -> np.ndarray:
    """Threshold ``alpha`` into FG/BG/Unknown and dilate the unknown band."""
    alpha = np.asarray(alpha)
    unknown = (alpha > BG_THRESHOLD) & (alpha < FG_THRESHOLD)
    if radius is None:
        radius = int(rng.integers(1, 5))
    if radius > 0 and unknown.any():
        unknown = ndimage.binary_dilation(unknown, structure=_disk(radius))
    trimap = np.where(alpha >= FG_THRESHOLD, FG, BG).astype(np.uint8)
    trimap[unknown] = UNKNOWN
    return trimap


def _disk(r: int) -> np.ndarray:
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    return x * x + y * y <= r * r


def snap_alpha(alpha) -> np.ndarray:
    a = np.clip(np.asarray(alpha, dtype=np.float64), 0.0, 1.0)
    a[a >= FG_THRESHOLD] = 1.0
    a[a <= BG_THRESHOLD] = 0.0
    return a


def _color_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth random colour gradient plus per-pixel texture noise."""
    grid = rng.uniform(0.0, 1.0, (3, 3, 3))
    field = resize(grid, (size, size), InterpMethod.BILINEAR)
    field += rng.uniform(0.05, 0.25) * rng.standard_normal((size, size, 3))
    return np.clip(field, 0.0, 1.0)


def _shape_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    if rng.random() < 0.5:
        r = rng.uniform(0.16, 0.26) * size
        cy, cx = rng.uniform(r, size - r, 2)
        rr, cc = draw.disk((cy, cx), r, shape=mask.shape)
    else:
        n = int(rng.integers(3, 7))
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        rad = rng.uniform(0.18, 0.3, n) * size
        cy, cx = rng.uniform(0.35, 0.65, 2) * size
        rr, cc = draw.polygon(cy + rad * np.sin(ang), cx + rad * np.cos(ang), shape=mask.shape)
    mask[rr, cc] = True
    return mask


def synth_alpha(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    """Soft-edged random shape: rasterised disc/polygon blurred by ``sigma`` px."""
    mask = _shape_mask(rng, size)
    while not mask.any():
        mask = _shape_mask(rng, size)
    return np.clip(ndimage.gaussian_filter(mask.astype(np.float64), sigma, mode="nearest"), 0.0, 1.0)


def synth_sample(rng: np.random.Generator, size: int = 32) -> CompSample:
    if size < 16:
        raise ValueError("synthetic samples need size >= 16")
    while True:
        sigma = rng.uniform(0.5, 1.2) * size / 32.0
        alpha = snap_alpha(synth_alpha(rng, size, sigma))
        trimap = make_trimap(alpha, rng)
        if 0.0 < (trimap == UNKNOWN).mean() <= MAX_UNKNOWN_FRACTION:
            break
    fg = _color_field(rng, size)
    bg = _color_field(rng, size)
    return CompSample(fg, bg, alpha, trimap, composite(fg, bg, alpha))


def augment_sample(sample: CompSample, rng: np.random.Generator, methods: Sequence = ALL_METHODS,
                   max_scale: float = 1.5) -> CompSample:
    """Rescale-and-crop augmentation drawing an interpolation method per resize.

    Foreground, alpha and background are resized independently (each draws
    its own method) and re-cropped to the original size before compositing;
    the trimap is regenerated from the augmented alpha.
    """
    h, w = sample.alpha.shape

    def rescale_crop(img, method, scale, oy, ox):
        th, tw = int(round(h * scale)), int(round(w * scale))
        out = resize(img, (th, tw), method)
        return out[oy : oy + h, ox : ox + w]

    s_fg = rng.uniform(1.0, max_scale)
    ey, ex = int(round(h * s_fg)) - h, int(round(w * s_fg)) - w
    oy, ox = int(rng.integers(ey + 1)), int(rng.integers(ex + 1))
    fg = rescale_crop(sample.foreground, random_interp(rng, methods), s_fg, oy, ox)
    alpha = rescale_crop(sample.alpha, random_interp(rng, methods), s_fg, oy, ox)
    s_bg = rng.uniform(1.0, max_scale)
    by, bx = int(round(h * s_bg)) - h, int(round(w * s_bg)) - w
    bg = rescale_crop(sample.background, random_interp(rng, methods), s_bg,
                      int(rng.integers(by + 1)), int(rng.integers(bx + 1)))
    fg, bg = np.clip(fg, 0.0, 1.0), np.clip(bg, 0.0, 1.0)
    alpha = snap_alpha(alpha)
    trimap = make_trimap(alpha, rng)
    return CompSample(fg, bg, alpha, trimap, composite(fg, bg, alpha))


def synth_dataset(n: int, size: int = 32, seed: int = 0, offset: int = 0, workers: int = 1) -> list[CompSample]:
    """``n`` samples, sample ``i`` drawn from its own generator seeded ``[seed, offset + i]``.

    Per-sample seeding makes the result independent of ``workers``.
    """
    make = lambda i: synth_sample(np.random.default_rng([seed, offset + i]), size)  # noqa: E731
    if workers <= 1 or n < 2:
        return [make(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(make, range(n)))
