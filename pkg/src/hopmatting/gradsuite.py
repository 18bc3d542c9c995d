"""The finite-difference suite run by ``hopmatting gradcheck`` and the tests."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attention import (
    HopBlockParams,
    LocalRelativePe,
    SiPositionalEncoding,
    global_hop_forward,
    local_hop_forward,
)
from .attention.posenc import BG, FG, UNKNOWN
from .autodiff import CheckReport, Tensor, finite_diff_check, ops
from .net import NetworkConfig, build, forward_batch, loss

H_STEP = 1e-5
REL_TOL = 1e-5


@dataclass
class SuiteResult:
    name: str
    report: CheckReport
    seconds: float


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _trimap(rng, h, w):
    t = rng.choice(np.array([BG, UNKNOWN, FG], dtype=np.uint8), size=(h, w))
    t[0, 0] = UNKNOWN
    return t


def _hop_check(rng, window=None, pe=False, trimap_emb=False, h=3, w=4, c=4):
    f_a, f_o = _rand(rng, h, w, c), _rand(rng, h, w, c)
    w_qk, w_out = _rand(rng, c, c), _rand(rng, c, c)
    extra = []
    tri = _trimap(rng, h, w) if trimap_emb else None
    if window is None:
        if pe or trimap_emb:
            extra.append(_rand(rng, c, c) * 0.5)
            if trimap_emb:
                extra.append(_rand(rng, c, 3) * 0.5)

        def f(fa, fo, wq, wo, *rest):
            enc = None
            if rest:
                enc = SiPositionalEncoding(rest[0], radius=2, trimap_w=rest[1] if len(rest) > 1 else None)
            return global_hop_forward(fa, fo, HopBlockParams(wq, wo), enc, tri)
    else:
        if pe:
            r = window // 2 + 1
            extra.append(_rand(rng, r, r, c) * 0.5)

        def f(fa, fo, wq, wo, *rest):
            enc = LocalRelativePe(rest[0], window) if rest else None
            return local_hop_forward(fa, fo, HopBlockParams(wq, wo), window, enc)

    return finite_diff_check(f, [f_a, f_o, w_qk, w_out, *extra], h=H_STEP, tol=REL_TOL)


def _primitive_checks(rng) -> dict[str, Callable[[], CheckReport]]:
    chk = lambda f, xs: finite_diff_check(f, xs, h=H_STEP, tol=REL_TOL)  # noqa: E731
    return {
        "linear": lambda: chk(ops.linear, [_rand(rng, 4, 3), _rand(rng, 2, 3)]),
        "softmax": lambda: chk(lambda x: ops.softmax(x, axis=-1), [_rand(rng, 3, 5)]),
        "l2_normalize": lambda: chk(lambda x: ops.l2_normalize(x, axis=-1), [_rand(rng, 4, 3)]),
        "matmul": lambda: chk(ops.matmul, [_rand(rng, 2, 3, 4), _rand(rng, 2, 4, 2)]),
        "conv2d": lambda: chk(
            lambda x, wt, b: ops.conv2d(x, wt, b, stride=2, padding=1),
            [_rand(rng, 1, 5, 4, 2), _rand(rng, 3, 3, 2, 3), _rand(rng, 3)],
        ),
        "upsample_nearest": lambda: chk(lambda x: ops.upsample_nearest(x, 2), [_rand(rng, 1, 2, 3, 2)]),
        "pad_reflect": lambda: chk(lambda x: ops.pad_reflect(x, 2, 1), [_rand(rng, 1, 3, 3, 1)]),
        "getitem": lambda: chk(lambda x: ops.getitem(x, (slice(None), np.array([[0, 2], [1, 1]]))), [_rand(rng, 2, 3)]),
        "concat": lambda: chk(lambda a, b: ops.concat([a, b], axis=1), [_rand(rng, 2, 2), _rand(rng, 2, 3)]),
        "relu": lambda: chk(ops.relu, [rng.uniform(0.1, 1.0, (3, 3)) * rng.choice([-1, 1], (3, 3))]),
        "abs": lambda: chk(ops.abs, [rng.uniform(0.1, 1.0, (3, 3)) * rng.choice([-1, 1], (3, 3))]),
        "clamp01": lambda: chk(ops.clamp01, [rng.uniform(0.05, 0.95, (3, 3))]),
    }


def _loss_check(rng) -> CheckReport:
    tri = _trimap(rng, 5, 5)
    gt = rng.uniform(0, 1, (5, 5))
    pred = np.clip(gt + rng.choice([-1, 1], (5, 5)) * rng.uniform(0.05, 0.3, (5, 5)), 0, 1)
    return finite_diff_check(lambda p: loss(p, gt, tri), [pred], h=H_STEP, tol=REL_TOL)


def e2e_config() -> NetworkConfig:
    return NetworkConfig(height=8, width=8, levels=2, enc_widths=(2,), window=3, pos_enc=True, trimap_emb=True,
                         pe_radius=2, seed=7)


def e2e_check(seed: int = 0, tol: float = REL_TOL) -> CheckReport:
    """Loss gradient w.r.t. every parameter of a 2-level network on an 8x8 input.

    The objective is the one the trainer differentiates: unknown-region L1
    on the unclamped output.
    """
    rng = np.random.default_rng(seed)
    model = build(e2e_config(), rng)
    names = sorted(model.params)
    # zero-init biases leave whole feature vectors at exactly 0, where the
    # cosine normalisation has a kink; check at a generic point instead
    for n in names:
        if n.endswith(".b"):
            model.params[n].data = rng.normal(0.0, 0.2, model.params[n].shape)
    # the block output starts damped; at that scale attention-path gradients
    # sink into the rounding noise of the loss
    w_out = model.params["global.w_out"]
    w_out.data = rng.standard_normal(w_out.shape) / np.sqrt(w_out.shape[0])
    # alpha near 0 has a finer float spacing than alpha near 0.5
    model.params["final.b"].data = np.zeros(1)
    image = rng.uniform(0, 1, (8, 8, 3))
    trimap = _trimap(rng, 8, 8)
    # the L1 gradient does not depend on the size of the residual, so a target
    # close to the prediction keeps the loss (and its rounding noise) small
    base = forward_batch(model, image[None], trimap[None], clamp=False).data[0]
    gt = base + rng.choice([-1.0, 1.0], base.shape) * rng.uniform(2e-3, 5e-3, base.shape)

    def f(*leaves):
        model.params = dict(zip(names, leaves))
        return loss(forward_batch(model, image[None], trimap[None], clamp=False)[0], gt, trimap)

    return finite_diff_check(f, [model.params[n].data for n in names], h=H_STEP, tol=tol)


def checks(seed: int = 0) -> dict[str, Callable[[], CheckReport]]:
    rng = np.random.default_rng(seed)
    suite = _primitive_checks(rng)
    suite.update({
        "global_hop": lambda: _hop_check(rng),
        # two channels: wider sinusoid codes carry near-constant low-frequency
        # columns whose gradients sit below the float64 difference floor
        "global_hop_si_pe": lambda: _hop_check(rng, pe=True, h=4, w=5, c=2),
        "global_hop_trimap_emb": lambda: _hop_check(rng, pe=True, trimap_emb=True, h=4, w=3, c=2),
        "local_hop_k1": lambda: _hop_check(rng, window=1),
        "local_hop_k3": lambda: _hop_check(rng, window=3),
        "local_hop_k5": lambda: _hop_check(rng, window=5, h=5, w=6),
        "local_hop_k3_lr_pe": lambda: _hop_check(rng, window=3, pe=True),
        "local_hop_k5_lr_pe": lambda: _hop_check(rng, window=5, pe=True, h=5, w=6),
        "loss": lambda: _loss_check(rng),
        "network_e2e_2level_8x8": lambda: e2e_check(seed),
    })
    return suite


def run_suite(seed: int = 0) -> list[SuiteResult]:
    out = []
    for name, fn in checks(seed).items():
        t0 = time.perf_counter()
        rep = fn()
        out.append(SuiteResult(name, rep, time.perf_counter() - t0))
    return out
