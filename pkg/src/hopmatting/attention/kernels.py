"""Backend selection for the local-window attention kernels.

The compiled extension is used when it imports; ``HOP_PURE_PYTHON=1`` forces
the numpy fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _local_py

try:
    if os.environ.get("HOP_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _local_ext
except ImportError:
    _local_ext = None

BACKENDS = {"python": _local_py}
if _local_ext is not None:
    BACKENDS["compiled"] = _local_ext

BACKEND = "compiled" if _local_ext is not None else "python"


def get_backend(name: str | None = None):
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"local attention backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


def local_forward(q, v, pe, k, backend: str | None = None):
    mod = get_backend(backend)
    q = np.ascontiguousarray(q, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    return mod.forward(q, v, pe, k)


def local_backward(q, v, pe, k, attn, g, backend: str | None = None):
    mod = get_backend(backend)
    return mod.backward(
        np.ascontiguousarray(q, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
        pe,
        k,
        np.ascontiguousarray(attn, dtype=np.float64),
        np.ascontiguousarray(g, dtype=np.float64),
    )
