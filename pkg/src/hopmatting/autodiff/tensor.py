"""Dense tensors and the gradient tape.

A :class:`Tensor` is a thin wrapper over a float64 numpy array. Primitive
operations (see :mod:`hopmatting.autodiff.ops`) record themselves on every
active :class:`GradTape`; :func:`backward` replays a tape in reverse to
produce vector-Jacobian products.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=np.float64):
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the real work lives in ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops

        return ops.getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


_local = threading.local()


def _active_tapes() -> list["GradTape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


class GradTape:
    """Ordered record of executed primitives.

    Use as a context manager; every primitive evaluated inside the block whose
    inputs require gradients is appended to :attr:`nodes`. Tapes are bound to
    the thread that entered them.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "GradTape":
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _active_tapes()
        stack.remove(self)

    @property
    def output(self) -> Tensor | None:
        return self.nodes[-1].output if self.nodes else None

    def gradient(self, output: Tensor, sources: Iterable[Tensor], seed=None) -> list[np.ndarray]:
        grads = backward(self, seed, output=output)
        return [grads.get(s, np.zeros_like(s.data)) for s in sources]


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, vjp: VJP) -> Tensor:
    """Wrap ``out_data`` in a Tensor and push a node on each active tape."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs:
        tapes = _active_tapes()
        if tapes:
            node = Node(op, tuple(inputs), out, vjp)
            for tape in tapes:
                tape.nodes.append(node)
    return out


def backward(tape: GradTape, seed=None, output: Tensor | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep over ``tape``.

    Returns a mapping from every tensor that received a gradient to
    d(sum(seed * output))/d(tensor). ``output`` defaults to the last recorded
    node's output; ``seed`` defaults to ones.
    """
    if output is None:
        output = tape.output
        if output is None:
            raise ValueError("empty tape and no output given")
    if seed is None:
        seed_arr = np.ones_like(output.data)
    else:
        seed_arr = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=output.data.dtype)
        if seed_arr.shape != output.shape:
            raise ShapeError(f"seed shape {seed_arr.shape} does not match output shape {output.shape}")

    grads: dict[int, np.ndarray] = {id(output): seed_arr}
    owners: dict[int, Tensor] = {id(output): output}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        in_grads = node.vjp(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                owners[key] = t
    return {owners[k]: v for k, v in grads.items()}
