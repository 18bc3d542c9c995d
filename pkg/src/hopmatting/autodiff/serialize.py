"""Binary tensor container and named-tensor archives.

Single tensor layout (all integers little-endian uint64)::

    b"HOPTNSR1" | rank | shape[0] ... shape[rank-1] | float64 LE values (row-major)

Archive layout::

    b"HOPARCH1" | manifest length | manifest JSON (utf-8) | tensor containers...

The manifest lists every tensor's name and shape in storage order, plus any
free-form ``meta`` dictionary (the network config lives there).
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

TENSOR_MAGIC = b"HOPTNSR1"
ARCHIVE_MAGIC = b"HOPARCH1"


class FormatError(ValueError):
    pass


def write_tensor(fh: BinaryIO, arr) -> None:
    arr = np.asarray(arr, dtype="<f8")  # not ascontiguousarray: it promotes 0-d to 1-d
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<Q", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated tensor data")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 8) != TENSOR_MAGIC:
        raise FormatError("bad tensor magic")
    (rank,) = struct.unpack("<Q", _read_exact(fh, 8))
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
    return data.reshape(shape).astype(np.float64)


def save_tensor(path, arr) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def tensor_bytes(arr) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def save_archive(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    names = list(tensors)
    manifest = {
        "tensors": [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            write_tensor(fh, tensors[n])


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(8) != ARCHIVE_MAGIC:
            raise FormatError(f"{path}: not a tensor archive")
        (n,) = struct.unpack("<Q", _read_exact(fh, 8))
        manifest = json.loads(_read_exact(fh, n).decode("utf-8"))
        tensors = {}
        for entry in manifest["tensors"]:
            arr = read_tensor(fh)
            if list(arr.shape) != entry["shape"]:
                raise FormatError(f"{entry['name']}: manifest shape {entry['shape']} != stored {list(arr.shape)}")
            tensors[entry["name"]] = arr
    return tensors, manifest.get("meta", {})
