"""Matting error metrics over the unknown trimap region.

Scaling follows the usual benchmark tables: SAD and Grad and Conn are
divided by 1000, MSE is multiplied by 1000. Every function accepts
``raw=True`` to skip the scaling.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import ndimage

from .attention.posenc import UNKNOWN

GRAD_SIGMA = 1.4
CONN_STEP = 0.1
CONN_THETA = 0.15
_FOUR_CONN = ndimage.generate_binary_structure(2, 1)


class DegenerateInputError(ValueError):
    """Raised when a metric is undefined for its input (e.g. empty mask)."""


def unknown_mask(trimap) -> np.ndarray:
    return np.asarray(trimap) == UNKNOWN


def _check(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    if not mask.any():
        raise DegenerateInputError("evaluation mask is empty")
    return pred, gt, mask


def sad(pred, gt, mask, raw: bool = False) -> float:
    pred, gt, mask = _check(pred, gt, mask)
    v = float(np.abs(pred - gt)[mask].sum())
    return v if raw else v / 1000.0


def mse(pred, gt, mask, raw: bool = False) -> float:
    pred, gt, mask = _check(pred, gt, mask)
    v = float(np.mean(((pred - gt) ** 2)[mask]))
    return v if raw else v * 1000.0


def _gauss(x, sigma):
    return np.exp(-(x**2) / (2 * sigma**2)) / (sigma * np.sqrt(2 * np.pi))


def gaussian_derivative_filters(sigma: float = GRAD_SIGMA) -> tuple[np.ndarray, np.ndarray]:
    """(d/dx, d/dy) Gaussian-derivative kernels truncated at 4 sigma, unit L2 norm."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    half = int(math.ceil(4 * sigma))
    u = np.arange(-half, half + 1, dtype=np.float64)
    g = _gauss(u, sigma)
    dg = -u * g / sigma**2
    hx = np.outer(g, dg)
    hx /= np.sqrt(np.sum(hx * hx))
    return hx, hx.T.copy()


def gradient_magnitude(img, sigma: float = GRAD_SIGMA) -> np.ndarray:
    hx, hy = gaussian_derivative_filters(sigma)
    img = np.asarray(img, dtype=np.float64)
    gx = ndimage.convolve(img, hx, mode="nearest")
    gy = ndimage.convolve(img, hy, mode="nearest")
    return np.sqrt(gx * gx + gy * gy)


def grad_error(pred, gt, mask, sigma: float = GRAD_SIGMA, raw: bool = False) -> float:
    pred, gt, mask = _check(pred, gt, mask)
    d = gradient_magnitude(pred, sigma) - gradient_magnitude(gt, sigma)
    v = float(np.sum((d * d)[mask]))
    return v if raw else v / 1000.0


def _largest_component(binary: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(binary, structure=_FOUR_CONN)
    if n == 0:
        return np.zeros_like(binary, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    # ties resolve to the component met first in raster order
    return labels == (int(np.argmax(sizes)) + 1)


def connectivity_levels(pred, gt, step: float = CONN_STEP) -> np.ndarray:
    """Per pixel, the largest threshold at which it is still connected to the source region."""
    n = int(round(1.0 / step))
    thresholds = [i * step for i in range(n + 1)]
    level = np.full(pred.shape, -1.0)
    for i in range(1, len(thresholds)):
        omega = _largest_component((pred >= thresholds[i]) & (gt >= thresholds[i]))
        drop = (level == -1.0) & ~omega
        level[drop] = thresholds[i - 1]
    level[level == -1.0] = 1.0
    return level


def conn_error(pred, gt, mask, step: float = CONN_STEP, theta: float = CONN_THETA, raw: bool = False) -> float:
    if not 0.0 < step < 1.0:
        raise ValueError("step must lie in (0, 1)")
    pred, gt, mask = _check(pred, gt, mask)
    if not ((pred > 0) & (gt > 0)).any():
        raise DegenerateInputError("no source region: mattes share no positive pixel")
    level = connectivity_levels(pred, gt, step)
    dp = pred - level
    dg = gt - level
    phi_p = 1.0 - dp * (dp >= theta)
    phi_g = 1.0 - dg * (dg >= theta)
    v = float(np.sum(np.abs(phi_p - phi_g)[mask]))
    return v if raw else v / 1000.0


@dataclass
class MetricReport:
    sad: float
    mse: float
    grad: float
    conn: float
    raw: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"sad": self.sad, "mse": self.mse, "grad": self.grad, "conn": self.conn}


def evaluate(pred, gt, trimap, sigma: float = GRAD_SIGMA, step: float = CONN_STEP) -> MetricReport:
    mask = unknown_mask(trimap)
    raw = {
        "sad": sad(pred, gt, mask, raw=True),
        "mse": mse(pred, gt, mask, raw=True),
        "grad": grad_error(pred, gt, mask, sigma, raw=True),
        "conn": conn_error(pred, gt, mask, step, raw=True),
    }
    return MetricReport(raw["sad"] / 1000.0, raw["mse"] * 1000.0, raw["grad"] / 1000.0, raw["conn"] / 1000.0, raw)


def write_reports(rows: Iterable[tuple[str, MetricReport]], csv_path, json_path=None) -> dict:
    """Write the per-image CSV and (optionally) a JSON summary of dataset means."""
    rows = list(rows)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "sad", "mse", "grad", "conn"])
        for image_id, rep in rows:
            writer.writerow([image_id] + [repr(float(x)) for x in rep.row().values()])
    keys = ("sad", "mse", "grad", "conn")
    summary = {
        "count": len(rows),
        "mean": {k: (math.fsum(getattr(r, k) for _, r in rows) / len(rows) if rows else None) for k in keys},
    }
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary


__all__ = [
    "DegenerateInputError",
    "MetricReport",
    "conn_error",
    "evaluate",
    "grad_error",
    "gradient_magnitude",
    "mse",
    "sad",
    "unknown_mask",
    "write_reports",
]
