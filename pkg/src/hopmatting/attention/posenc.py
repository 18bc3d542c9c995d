"""Positional encodings and trimap embedding for HOP blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops

# Trimap label values, shared with PNG encoding.
BG, UNKNOWN, FG = 0, 128, 255
_ONE_HOT = {FG: (1.0, 0.0, 0.0), BG: (0.0, 1.0, 0.0), UNKNOWN: (0.0, 0.0, 1.0)}


def sinusoidal_code(d: int, dim: int) -> np.ndarray:
    """Sinusoidal code of a non-negative integer distance: interleaved sin/cos."""
    if dim % 2:
        raise ValueError(f"sinusoid dimension must be even, got {dim}")
    i = np.arange(dim // 2)
    freq = 10000.0 ** (-2.0 * i / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(d * freq)
    out[1::2] = np.cos(d * freq)
    return out


def trimap_code(label) -> np.ndarray:
    try:
        return np.array(_ONE_HOT[int(label)])
    except KeyError:
        raise ValueError(f"unknown trimap label {label!r}; expected one of {BG}, {UNKNOWN}, {FG}") from None


def trimap_onehot(trimap) -> np.ndarray:
    """Vectorised :func:`trimap_code` over an integer label array; appends a size-3 axis."""
    t = np.asarray(trimap)
    bad = ~np.isin(t, (BG, UNKNOWN, FG))
    if bad.any():
        raise ValueError(f"unknown trimap label(s) {np.unique(t[bad]).tolist()}")
    return np.stack([t == FG, t == BG, t == UNKNOWN], axis=-1).astype(np.float64)


@dataclass
class SiPositionalEncoding:
    """Scale-insensitive relative encoding, clamped beyond ``radius``.

    ``w_pe`` maps sinusoidal codes (dimension ``w_pe.shape[1]``) to channels;
    ``trimap_w`` (C x 3), when set, embeds the key's trimap label.
    """

    w_pe: Tensor
    radius: int = 7
    trimap_w: Tensor | None = None

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be a positive integer")

    @property
    def channels(self) -> int:
        return self.w_pe.shape[0]

    @property
    def code_dim(self) -> int:
        return self.w_pe.shape[1]

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, radius: int = 7, trimap: bool = False,
             code_dim: int | None = None, scale: float = 0.1):
        code_dim = code_dim or channels
        w_pe = Tensor(rng.standard_normal((channels, code_dim)) * scale, requires_grad=True, name="w_pe")
        tw = Tensor(rng.standard_normal((channels, 3)) * scale, requires_grad=True, name="trimap_w") if trimap else None
        return cls(w_pe, radius, tw)

    def codes(self) -> np.ndarray:
        """Sinusoidal codes for distances 0..radius, one row each."""
        return np.stack([sinusoidal_code(d, self.code_dim) for d in range(self.radius + 1)])

    def table(self) -> Tensor:
        """Encodings e_0..e_radius as a (radius+1) x C tensor."""
        return ops.linear(self.codes(), self.w_pe)

    def clamp(self, d) -> np.ndarray:
        return np.minimum(np.asarray(d), self.radius)

    def parameters(self) -> dict[str, Tensor]:
        p = {"w_pe": self.w_pe}
        if self.trimap_w is not None:
            p["trimap_w"] = self.trimap_w
        return p


def si_encoding(pe: SiPositionalEncoding, d: int) -> np.ndarray:
    if d < 0:
        raise ValueError("distance must be non-negative")
    return pe.table().data[min(d, pe.radius)].copy()


@dataclass
class LocalRelativePe:
    """Direction-invariant window embedding indexed by (|row offset|, |col offset|)."""

    table: Tensor
    window: int

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be a positive odd integer, got {self.window}")
        r = self.window // 2 + 1
        if self.table.shape[:2] != (r, r):
            raise ValueError(f"table shape {self.table.shape} does not fit window {self.window}")

    @classmethod
    def init(cls, channels: int, window: int, rng: np.random.Generator, scale: float = 0.1):
        r = window // 2 + 1
        return cls(Tensor(rng.standard_normal((r, r, channels)) * scale, requires_grad=True, name="lr_pe"), window)

    @property
    def channels(self) -> int:
        return self.table.shape[2]

    def lookup(self, dr: int, dc: int) -> np.ndarray:
        r = self.window // 2
        if abs(dr) > r or abs(dc) > r:
            raise IndexError(f"offset ({dr}, {dc}) outside window {self.window}")
        return self.table.data[abs(dr), abs(dc)]

    def parameters(self) -> dict[str, Tensor]:
        return {"table": self.table}
