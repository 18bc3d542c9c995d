"""Finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, Tensor, backward

DENOM_FLOOR = 1e-8


@dataclass
class CheckReport:
    max_rel_error: float
    tol: float
    per_input: list[float] = field(default_factory=list)
    worst_index: tuple | None = None
    analytic: list[np.ndarray] = field(default_factory=list)
    numeric: list[np.ndarray] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)


def rel_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), DENOM_FLOOR)


def numeric_grad(f: Callable[..., Tensor], arrays: list[np.ndarray], weights: np.ndarray, h: float) -> list[np.ndarray]:
    """Central differences of ``sum(weights * f(*arrays))`` w.r.t. every coordinate.

    The two outputs are subtracted before contracting with ``weights`` so that
    output entries untouched by the perturbation cancel exactly.
    """

    def evaluate() -> np.ndarray:
        return np.array(f(*[Tensor(a) for a in arrays]).data, dtype=np.float64)

    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = evaluate()
            flat[i] = orig - h
            fm = evaluate()
            flat[i] = orig
            gflat[i] = np.sum(weights * (fp - fm)) / (2.0 * h)
        grads.append(g)
    return grads


def finite_diff_check(
    f: Callable[..., Tensor],
    inputs: Sequence,
    h: float = 1e-5,
    tol: float = 1e-5,
    seed=None,
) -> CheckReport:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` receives one Tensor per entry of ``inputs``. Non-scalar outputs are
    contracted with ``seed`` (default: fixed pseudo-random weights) so that a
    single backward pass covers every output coordinate. Failures are
    reported, never raised.
    """
    arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with GradTape() as tape:
        out = f(*leaves)
    if seed is None:
        weights = np.random.default_rng(1234).standard_normal(out.shape) if out.ndim else np.ones(())
    else:
        weights = np.asarray(seed, dtype=np.float64)
    grads = backward(tape, weights, output=out) if out.requires_grad else {}
    analytic = [grads.get(leaf, np.zeros_like(leaf.data)) for leaf in leaves]
    numeric = numeric_grad(f, arrays, weights, h)

    per_input, worst, worst_idx = [], 0.0, None
    for k, (a, n) in enumerate(zip(analytic, numeric)):
        err = rel_error(a, n)
        m = float(err.max()) if err.size else 0.0
        per_input.append(m)
        if m > worst or worst_idx is None:
            worst = max(worst, m)
            worst_idx = (k, np.unravel_index(int(err.argmax()), err.shape) if err.size else ())
    return CheckReport(worst, tol, per_input, worst_idx, analytic, numeric)
