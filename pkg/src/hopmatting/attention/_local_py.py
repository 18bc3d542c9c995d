"""Pure-numpy local-window attention kernels.

Vectorized over positions, looping only over the k*k window offsets. Kept
numerically interchangeable with the compiled kernels in ``_local_ext``.
"""

from __future__ import annotations

import numpy as np


def _offsets(k: int):
    r = k // 2
    for dr in range(-r, r + 1):
        for dc in range(-r, r + 1):
            yield dr, dc


def _span(n: int, d: int) -> tuple[int, int]:
    # query rows i with 0 <= i + d < n
    return max(0, -d), min(n, n - d)


def forward(q: np.ndarray, v: np.ndarray, pe: np.ndarray | None, k: int):
    """Return (aggregated values, attention weights [B,H,W,k*k])."""
    b, h, w, c = q.shape
    kk = k * k
    logits = np.full((b, h, w, kk), -np.inf)
    for o, (dr, dc) in enumerate(_offsets(k)):
        r0, r1 = _span(h, dr)
        c0, c1 = _span(w, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        qs = q[:, r0:r1, c0:c1]
        ks = q[:, r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        if pe is not None:
            ks = ks + pe[abs(dr), abs(dc)]
        logits[:, r0:r1, c0:c1, o] = np.einsum("bhwc,bhwc->bhw", qs, ks)
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    attn = e / e.sum(axis=-1, keepdims=True)
    out = np.zeros_like(v)
    for o, (dr, dc) in enumerate(_offsets(k)):
        r0, r1 = _span(h, dr)
        c0, c1 = _span(w, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        out[:, r0:r1, c0:c1] += attn[:, r0:r1, c0:c1, o, None] * v[:, r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    return out, attn


def backward(q: np.ndarray, v: np.ndarray, pe: np.ndarray | None, k: int, attn: np.ndarray, g: np.ndarray):
    """Return (dq, dv, dpe) given upstream gradient ``g`` of the output."""
    b, h, w, c = q.shape
    kk = k * k
    da = np.zeros((b, h, w, kk))
    dv = np.zeros_like(v)
    spans = []
    for o, (dr, dc) in enumerate(_offsets(k)):
        r0, r1 = _span(h, dr)
        c0, c1 = _span(w, dc)
        spans.append((dr, dc, r0, r1, c0, c1))
        if r0 >= r1 or c0 >= c1:
            continue
        vs = v[:, r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        gs = g[:, r0:r1, c0:c1]
        da[:, r0:r1, c0:c1, o] = np.einsum("bhwc,bhwc->bhw", gs, vs)
        dv[:, r0 + dr : r1 + dr, c0 + dc : c1 + dc] += attn[:, r0:r1, c0:c1, o, None] * gs
    dlog = attn * (da - np.sum(attn * da, axis=-1, keepdims=True))
    dq = np.zeros_like(q)
    dpe = None if pe is None else np.zeros_like(pe)
    for o, (dr, dc, r0, r1, c0, c1) in enumerate(spans):
        if r0 >= r1 or c0 >= c1:
            continue
        dl = dlog[:, r0:r1, c0:c1, o, None]
        qs = q[:, r0:r1, c0:c1]
        ks = q[:, r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        if pe is not None:
            dq[:, r0:r1, c0:c1] += dl * (ks + pe[abs(dr), abs(dc)])
            dpe[abs(dr), abs(dc)] += np.sum(dl * qs, axis=(0, 1, 2))
        else:
            dq[:, r0:r1, c0:c1] += dl * ks
        dq[:, r0 + dr : r1 + dr, c0 + dc : c1 + dc] += dl * qs
    return dq, dv, dpe
