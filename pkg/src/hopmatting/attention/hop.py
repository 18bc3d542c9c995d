"""Global and local HOP blocks plus self-attention baselines.

Queries and keys both come from the appearance features (one shared
transform), values are the opacity features. Attention logits are cosine
similarities, optionally augmented with positional and trimap terms; the
aggregated opacity is mapped by ``w_out`` and added back residually.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ShapeError, Tensor, as_tensor, ops
from ..autodiff.tensor import record
from . import kernels
from .posenc import LocalRelativePe, SiPositionalEncoding, trimap_onehot


@dataclass
class HopBlockParams:
    w_qk: Tensor
    w_out: Tensor
    # Value transform for the self-attention baseline; HOP blocks leave it unset.
    w_v: Tensor | None = None

    def __post_init__(self):
        c = self.w_qk.shape[0]
        for name in ("w_qk", "w_out", "w_v"):
            w = getattr(self, name)
            if w is not None and w.shape != (c, c):
                raise ShapeError(f"{name} must be {c}x{c}, got {w.shape}")

    @property
    def channels(self) -> int:
        return self.w_qk.shape[0]

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, out_scale: float = 0.1, value: bool = False):
        std = 1.0 / np.sqrt(channels)
        w_qk = Tensor(rng.standard_normal((channels, channels)) * std, requires_grad=True, name="w_qk")
        w_out = Tensor(rng.standard_normal((channels, channels)) * std * out_scale, requires_grad=True, name="w_out")
        w_v = None
        if value:
            w_v = Tensor(rng.standard_normal((channels, channels)) * std, requires_grad=True, name="w_v")
        return cls(w_qk, w_out, w_v)

    def parameters(self) -> dict[str, Tensor]:
        p = {"w_qk": self.w_qk, "w_out": self.w_out}
        if self.w_v is not None:
            p["w_v"] = self.w_v
        return p


def _batched(f_a, f_o, params: HopBlockParams):
    f_a, f_o = as_tensor(f_a), as_tensor(f_o)
    if f_a.shape != f_o.shape:
        raise ShapeError(f"appearance {f_a.shape} and opacity {f_o.shape} features differ in shape")
    if f_a.ndim not in (3, 4):
        raise ShapeError(f"expected H x W x C or B x H x W x C features, got {f_a.shape}")
    if f_a.shape[-1] == 0:
        raise ShapeError("zero-channel feature map")
    if f_a.shape[-1] != params.channels:
        raise ShapeError(f"features have {f_a.shape[-1]} channels, block expects {params.channels}")
    single = f_a.ndim == 3
    if single:
        f_a = ops.reshape(f_a, (1,) + f_a.shape)
        f_o = ops.reshape(f_o, (1,) + f_o.shape)
    return f_a, f_o, single


def _unit_queries(f_a: Tensor, params: HopBlockParams) -> Tensor:
    return ops.l2_normalize(ops.linear(f_a, params.w_qk), axis=-1)


def _values(f_o: Tensor, params: HopBlockParams) -> Tensor:
    return f_o if params.w_v is None else ops.linear(f_o, params.w_v)


def _finish(agg: Tensor, f_o: Tensor, params: HopBlockParams, single: bool) -> Tensor:
    out = ops.add(ops.linear(agg, params.w_out), f_o)
    return ops.reshape(out, out.shape[1:]) if single else out


def _trimap_labels(trimap, b: int, h: int, w: int) -> np.ndarray:
    from ..augment import resize_labels

    t = np.asarray(trimap)
    if t.ndim == 2:
        t = np.broadcast_to(t, (b,) + t.shape)
    if t.shape[1:] != (h, w):
        t = np.stack([resize_labels(x, (h, w)) for x in t])
    return t


def global_logits(f_a, params: HopBlockParams, pe: SiPositionalEncoding | None = None, trimap=None) -> Tensor:
    """Attention logits [B, N, N] over flattened positions (N = H*W)."""
    f_a = as_tensor(f_a)
    if f_a.ndim == 3:
        f_a = ops.reshape(f_a, (1,) + f_a.shape)
    b, h, w, c = f_a.shape
    n = h * w
    q = ops.reshape(_unit_queries(f_a, params), (b, n, c))
    logits = ops.matmul(q, ops.transpose(q, (0, 2, 1)))
    if pe is not None:
        if pe.channels != c:
            raise ShapeError(f"positional encoding has {pe.channels} channels, block has {c}")
        rows, cols = np.divmod(np.arange(n), w)
        d_row = pe.clamp(np.abs(rows[:, None] - rows[None, :]))
        d_col = pe.clamp(np.abs(cols[:, None] - cols[None, :]))
        qe = ops.linear(q, pe.table())  # [B, N, radius+1]: q . e_d
        query = np.arange(n)[:, None]
        pos = ops.add(ops.getitem(qe, (slice(None), query, d_row)), ops.getitem(qe, (slice(None), query, d_col)))
        logits = ops.add(logits, pos)
        if trimap is not None and pe.trimap_w is not None:
            t = trimap_onehot(_trimap_labels(trimap, b, h, w)).reshape(b, n, 3)
            tw = ops.linear(t, pe.trimap_w)  # [B, N, C]
            logits = ops.add(logits, ops.matmul(q, ops.transpose(tw, (0, 2, 1))))
    return logits


def global_attention(f_a, params: HopBlockParams, pe=None, trimap=None) -> Tensor:
    return ops.softmax(global_logits(f_a, params, pe, trimap), axis=-1)


def global_hop_forward(f_a, f_o, params: HopBlockParams, pe: SiPositionalEncoding | None = None, trimap=None) -> Tensor:
    """Global HOP block over all positions of an (optionally batched) NHWC map."""
    f_a, f_o, single = _batched(f_a, f_o, params)
    b, h, w, c = f_o.shape
    attn = global_attention(f_a, params, pe, trimap)
    v = ops.reshape(_values(f_o, params), (b, h * w, c))
    agg = ops.reshape(ops.matmul(attn, v), (b, h, w, c))
    return _finish(agg, f_o, params, single)


def local_attention(qhat, values, table, window: int, backend: str | None = None) -> Tensor:
    """Fused windowed attention primitive.

    ``qhat`` serves as both query and key; ``table`` is the (r+1, r+1, C)
    relative embedding or None. Softmax runs over in-bounds neighbours only.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    qhat, values = as_tensor(qhat), as_tensor(values)
    inputs = [qhat, values]
    pe = None
    if table is not None:
        table = as_tensor(table)
        pe = table.data
        inputs.append(table)
    out, attn = kernels.local_forward(qhat.data, values.data, pe, window, backend)

    def vjp(g):
        dq, dv, dpe = kernels.local_backward(qhat.data, values.data, pe, window, attn, g, backend)
        return (dq, dv, dpe) if table is not None else (dq, dv)

    return record("local_attention", inputs, out, vjp)


def local_attention_weights(f_a, params: HopBlockParams, window: int, pe: LocalRelativePe | None = None) -> np.ndarray:
    """Attention weights [B, H, W, k*k]; zero for out-of-bounds window slots."""
    f_a = as_tensor(f_a)
    if f_a.ndim == 3:
        f_a = ops.reshape(f_a, (1,) + f_a.shape)
    q = _unit_queries(f_a, params).data
    _, attn = kernels.local_forward(q, np.zeros_like(q), None if pe is None else pe.table.data, window)
    return attn


def local_hop_forward(f_a, f_o, params: HopBlockParams, window: int, pe: LocalRelativePe | None = None,
                      backend: str | None = None) -> Tensor:
    """Local HOP block: attention restricted to a window x window neighbourhood."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    f_a, f_o, single = _batched(f_a, f_o, params)
    table = None
    if pe is not None:
        if pe.window != window:
            raise ValueError(f"positional table built for window {pe.window}, block uses {window}")
        table = pe.table
    q = _unit_queries(f_a, params)
    agg = local_attention(q, _values(f_o, params), table, window, backend)
    return _finish(agg, f_o, params, single)


def self_attention_forward(f, params: HopBlockParams, scope: str = "global", window: int | None = None,
                           pe=None, trimap=None) -> Tensor:
    """Self-attention baseline: query, key and value all come from ``f``."""
    if scope == "global":
        return global_hop_forward(f, f, params, pe, trimap)
    if scope == "local":
        if window is None:
            raise ValueError("local self-attention needs a window size")
        return local_hop_forward(f, f, params, window, pe)
    raise ValueError(f"scope must be 'global' or 'local', got {scope!r}")
