"""Input-gradient heatmaps for a single predicted alpha pixel.

Seed the backward pass with 1 at one output pixel (0 elsewhere) and measure
how strongly each input pixel moves it: the L2 norm of the RGB gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .attention.posenc import UNKNOWN
from .autodiff import GradTape, Tensor, backward
from .autodiff.serialize import save_tensor
from .net.model import MattingModel, forward


class PixelSelectionError(ValueError):
    pass


@dataclass
class GradientMap:
    values: np.ndarray  # H x W, non-negative
    pixel: tuple[int, int]

    def normalized(self) -> np.ndarray:
        """Per-image min-max scaling to [0, 1]; a constant map becomes all zeros."""
        v = self.values
        lo, hi = float(v.min()), float(v.max())
        if hi <= lo:
            return np.zeros_like(v)
        return (v - lo) / (hi - lo)


def choose_pixel(trimap, rng: np.random.Generator) -> tuple[int, int]:
    rows, cols = np.nonzero(np.asarray(trimap) == UNKNOWN)
    if rows.size == 0:
        raise PixelSelectionError("trimap has no unknown pixels to select from")
    i = int(rng.integers(rows.size))
    return int(rows[i]), int(cols[i])


def input_gradient_map(fn: Callable[[Tensor], Tensor], image, pixel: tuple[int, int], seed_value: float = 1.0) -> GradientMap:
    """Gradient map of ``fn(image)[pixel]`` for any differentiable ``fn``: H x W x C -> H x W."""
    x = Tensor(np.asarray(image, dtype=np.float64), requires_grad=True)
    with GradTape() as tape:
        out = fn(x)
    r, c = pixel
    if not (0 <= r < out.shape[0] and 0 <= c < out.shape[1]):
        raise PixelSelectionError(f"pixel {pixel} outside the {out.shape[0]}x{out.shape[1]} output")
    seed = np.zeros(out.shape)
    seed[r, c] = seed_value
    grads = backward(tape, seed=seed, output=out)
    g = grads.get(x, np.zeros_like(x.data))
    return GradientMap(np.sqrt(np.sum(g * g, axis=-1)), (int(r), int(c)))


def attention_gradient_map(model: MattingModel, image, trimap, pixel: tuple[int, int] | None = None,
                           rng: np.random.Generator | None = None, seed_value: float = 1.0) -> GradientMap:
    trimap = np.asarray(trimap)
    if pixel is None:
        pixel = choose_pixel(trimap, rng if rng is not None else np.random.default_rng())
    else:
        r, c = (int(v) for v in pixel)
        if not (0 <= r < trimap.shape[0] and 0 <= c < trimap.shape[1]):
            raise PixelSelectionError(f"pixel ({r}, {c}) outside the {trimap.shape[0]}x{trimap.shape[1]} image")
        if trimap[r, c] != UNKNOWN:
            raise PixelSelectionError(f"pixel ({r}, {c}) is not in the unknown region (label {int(trimap[r, c])})")
        pixel = (r, c)
    return input_gradient_map(lambda x: forward(model, x, trimap), image, pixel, seed_value)


def render(gmap: GradientMap, path, mark: bool = True) -> None:
    """Write the min-max normalised map as a gray PNG.

    When ``mark`` is set the query pixel gets red 255 and green 0; blue always
    holds the plain gray level, which is what :func:`load_rendered` reads.
    """
    gray = np.round(gmap.normalized() * 255.0).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    if mark:
        r, c = gmap.pixel
        rgb[r, c, 0] = 255
        rgb[r, c, 1] = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(path, format="PNG", optimize=False, compress_level=6)


def load_rendered(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr[:, :, 2] / 255.0


def dump_raw(gmap: GradientMap, path) -> None:
    save_tensor(path, gmap.values)
