"""Desk-scale two-encoder matting network with hierarchical opacity propagation.

Layout for ``levels = L`` (S = L - 1 stride-2 stages):

* opacity encoder: RGB + one-hot trimap -> S stride-2 conv stages
* appearance encoder: RGB only -> S narrower stride-2 conv stages, tapped at
  every resolution and projected (1x1) to the decoder width there
* decoder: global block at the bottleneck, then S rounds of
  nearest-upsample + 3x3 conv, with a local block after each of the first
  L - 2 rounds; a final 3x3 conv gives one channel, clamped to [0, 1]
* known trimap regions are written through (FG -> 1, BG -> 0)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..attention import (
    BG,
    FG,
    UNKNOWN,
    HopBlockParams,
    LocalRelativePe,
    SiPositionalEncoding,
    global_hop_forward,
    local_hop_forward,
    trimap_onehot,
)
from ..autodiff import ShapeError, Tensor, as_tensor, ops
from ..autodiff.ops import _reflect_index
from ..autodiff.serialize import load_archive, save_archive
from .config import NetworkConfig, network_from_dict, network_to_dict


class EmptyUnknownRegionError(ValueError):
    """The trimap has no unknown pixel, so the loss is undefined."""


@dataclass
class MattingModel:
    config: NetworkConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def state(self) -> dict[str, np.ndarray]:
        return {k: self.params[k].data.copy() for k in sorted(self.params)}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ValueError(f"state does not match model parameters: {sorted(missing)}")
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    # Named blocks -----------------------------------------------------

    def hop_block(self, prefix: str) -> HopBlockParams:
        p = self.params
        return HopBlockParams(p[f"{prefix}.w_qk"], p[f"{prefix}.w_out"], p.get(f"{prefix}.w_v"))

    def global_pe(self) -> SiPositionalEncoding | None:
        w_pe = self.params.get("global.w_pe")
        tw = self.params.get("global.trimap_w")
        if w_pe is None and tw is None:
            return None
        if w_pe is None:
            # trimap embedding alone: positional term fixed at zero
            c = tw.shape[0]
            w_pe = Tensor(np.zeros((c, c)))
        return SiPositionalEncoding(w_pe, self.config.pe_radius, tw)

    def local_pe(self, i: int) -> LocalRelativePe | None:
        t = self.params.get(f"local{i}.lr_pe")
        return None if t is None else LocalRelativePe(t, self.config.window)

    def block_names(self) -> list[str]:
        names = sorted({k.split(".")[0] for k in self.params if k.startswith(("global", "local"))})
        return names


def _widths(cfg: NetworkConfig):
    enc = list(cfg.enc_widths)
    s = len(enc)
    app = [max(4, w // 2) for w in enc]
    # decoder width after upsampling round l (1..S); bottleneck is enc[-1]
    dec = [enc[-1]] + [enc[s - 1 - l] for l in range(1, s)] + [max(4, enc[0] // 2)]
    return enc, app, dec


def _skip_channels(cfg: NetworkConfig, enc, l: int) -> int:
    if not cfg.skips:
        return 0
    s = len(enc)
    return 6 if l == s else enc[s - 1 - l]


def _conv(rng, name, k, cin, cout, params, bias=0.0, std=None):
    std = np.sqrt(2.0 / (k * k * cin)) if std is None else std
    params[f"{name}.w"] = Tensor(rng.standard_normal((k, k, cin, cout)) * std, requires_grad=True, name=f"{name}.w")
    params[f"{name}.b"] = Tensor(np.full(cout, bias), requires_grad=True, name=f"{name}.b")


def _hop_params(rng, prefix, c, params, value: bool):
    blk = HopBlockParams.init(c, rng, value=value)
    for k, v in blk.parameters().items():
        v.name = f"{prefix}.{k}"
        params[f"{prefix}.{k}"] = v


def build(config: NetworkConfig, rng: np.random.Generator | None = None) -> MattingModel:
    """Initialise every parameter from ``rng`` (defaults to ``config.seed``)."""
    cfg = config.validate()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    enc, app, dec = _widths(cfg)
    s = len(enc)
    p: dict[str, Tensor] = {}
    cin = 6
    for i, w in enumerate(enc):
        _conv(rng, f"enc{i}", 3, cin, w, p)
        cin = w
    uses_app = cfg.block_type == "hop" and (cfg.global_hop or cfg.num_local_blocks)
    if uses_app:
        cin = 3
        for i, w in enumerate(app):
            _conv(rng, f"app{i}", 3, cin, w, p)
            cin = w
    value = cfg.block_type == "self"
    if cfg.global_hop:
        _hop_params(rng, "global", dec[0], p, value)
        if uses_app:
            _conv(rng, "global.proj", 1, app[s - 1], dec[0], p)
        if cfg.pos_enc or cfg.trimap_emb:
            pe = SiPositionalEncoding.init(dec[0], rng, cfg.pe_radius, trimap=cfg.trimap_emb)
            if cfg.pos_enc:
                p["global.w_pe"] = pe.w_pe
            if pe.trimap_w is not None:
                p["global.trimap_w"] = pe.trimap_w
    for l in range(1, s + 1):
        _conv(rng, f"dec{l}", 3, dec[l - 1] + _skip_channels(cfg, enc, l), dec[l], p)
        if l <= cfg.num_local_blocks:
            i = l - 1
            _hop_params(rng, f"local{i}", dec[l], p, value)
            if uses_app:
                _conv(rng, f"local{i}.proj", 1, app[s - 1 - l], dec[l], p)
            if cfg.pos_enc:
                p[f"local{i}.lr_pe"] = LocalRelativePe.init(dec[l], cfg.window, rng).table
    _conv(rng, "final", 3, dec[s], 1, p, bias=0.5, std=0.01)
    for k, v in p.items():
        v.name = k
    return MattingModel(cfg, p)


def _conv_apply(params, name, x, stride=1):
    w = params[f"{name}.w"]
    pad = w.shape[0] // 2
    return ops.conv2d(x, w, params[f"{name}.b"], stride=stride, padding=pad)


def _pad_inputs(image, trimap, mult):
    b, h, w = trimap.shape
    ph, pw = (-h) % mult, (-w) % mult
    if ph or pw:
        image = ops.pad_reflect(image, ph, pw)
        trimap = trimap[:, _reflect_index(h, h + ph)][:, :, _reflect_index(w, w + pw)]
    return image, trimap, (h, w)


def forward_batch(model: MattingModel, images, trimaps, clamp: bool = True) -> Tensor:
    """Predict alpha for a batch: images [B,H,W,3] (Tensor or array), trimaps [B,H,W].

    ``clamp=False`` skips the final clamp to [0, 1]; the trainer optimises
    that unclamped output so out-of-range pixels still receive gradient.
    """
    cfg = model.config
    p = model.params
    images = as_tensor(images)
    trimaps = np.asarray(trimaps)
    if images.ndim != 4 or images.shape[3] != 3:
        raise ShapeError(f"images must be B x H x W x 3, got {images.shape}")
    if trimaps.shape != images.shape[:3]:
        raise ShapeError(f"trimap {trimaps.shape} does not match image {images.shape[:3]}")
    x_img, t_pad, (h, w) = _pad_inputs(images, trimaps, cfg.downsample)
    enc, app, dec = _widths(cfg)
    s = len(enc)

    x = ops.concat([x_img, trimap_onehot(t_pad)], axis=3)
    feats = [x]
    for i in range(s):
        x = ops.relu(_conv_apply(p, f"enc{i}", x, stride=2))
        feats.append(x)

    taps = []
    if "app0.w" in p:
        a = x_img
        for i in range(s):
            a = ops.relu(_conv_apply(p, f"app{i}", a, stride=2))
            taps.append(a)

    def appearance(prefix, level_from_top, feat):
        if cfg.block_type == "self":
            return feat
        return _conv_apply(p, f"{prefix}.proj", taps[level_from_top])

    if cfg.global_hop:
        blk = model.hop_block("global")
        f_a = appearance("global", s - 1, x)
        x = global_hop_forward(f_a, x, blk, model.global_pe(), t_pad if "global.trimap_w" in p else None)
    for l in range(1, s + 1):
        x = ops.upsample_nearest(x, 2)
        if cfg.skips:
            x = ops.concat([x, feats[s - l]], axis=3)
        x = ops.relu(_conv_apply(p, f"dec{l}", x))
        if l <= cfg.num_local_blocks:
            i = l - 1
            f_a = appearance(f"local{i}", s - 1 - l, x)
            x = local_hop_forward(f_a, x, model.hop_block(f"local{i}"), cfg.window, model.local_pe(i))
    y = _conv_apply(p, "final", x)
    if clamp:
        y = ops.clamp01(y)
    y = ops.reshape(y, y.shape[:3])
    if y.shape[1:] != (h, w):
        y = ops.getitem(y, (slice(None), slice(0, h), slice(0, w)))
    unknown = (trimaps == UNKNOWN).astype(np.float64)
    known_fg = (trimaps == FG).astype(np.float64)
    return ops.add(ops.mul(y, unknown), known_fg)


def forward(model: MattingModel, image, trimap) -> Tensor:
    """Single-image prediction: image H x W x 3, trimap H x W -> alpha H x W."""
    image = as_tensor(image)
    trimap = np.asarray(trimap)
    if image.ndim != 3 or image.shape[:2] != trimap.shape:
        raise ShapeError(f"image {image.shape} and trimap {trimap.shape} sizes differ")
    out = forward_batch(model, ops.reshape(image, (1,) + image.shape), trimap[None])
    return ops.reshape(out, out.shape[1:])


def predict(model: MattingModel, image, trimap) -> np.ndarray:
    return forward(model, np.asarray(image, dtype=np.float64), trimap).data


def loss(pred, gt, trimap) -> Tensor:
    """Mean absolute alpha error over unknown trimap pixels."""
    pred = as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(trimap) == UNKNOWN
    if pred.shape != gt.shape or gt.shape != mask.shape:
        raise ShapeError(f"loss: pred {pred.shape}, gt {gt.shape}, trimap {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise EmptyUnknownRegionError("trimap has no unknown pixels")
    err = ops.mul(ops.abs(ops.sub(pred, gt)), mask.astype(np.float64))
    return ops.mul(ops.sum(err), 1.0 / n)


def _back_conv(span, k, stride, pad, n_in):
    lo, hi = span
    return max(0, lo * stride - pad), min(n_in - 1, hi * stride - pad + k - 1)


def receptive_field(config: NetworkConfig, shape: tuple[int, int], pixel: tuple[int, int]) -> np.ndarray:
    """Boolean mask of input pixels that can reach ``pixel`` through convolutions alone.

    Every path of the conv/upsample/skip graph is followed backwards with
    per-axis index intervals; the union of the resulting rectangles is
    returned. Attention blocks are ignored.
    """
    mult = config.downsample
    h, w = shape
    hp, wp = h + (-h) % mult, w + (-w) % mult
    s = config.levels - 1
    mask = np.zeros((hp, wp), dtype=bool)

    def size(n, stage):  # spatial size after ``stage`` stride-2 convs
        for _ in range(stage):
            n = (n + 2 - 3) // 2 + 1
        return n

    def enc(stage, rs, cs):
        # stage 0 is the network input; stage i the output of encoder conv i-1
        while stage > 0:
            rs = _back_conv(rs, 3, 2, 1, size(hp, stage - 1))
            cs = _back_conv(cs, 3, 2, 1, size(wp, stage - 1))
            stage -= 1
        mask[rs[0] : rs[1] + 1, cs[0] : cs[1] + 1] = True

    def dec(level, rs, cs):
        # output of decoder level ``level``; level 0 is the bottleneck
        if level == 0:
            enc(s, rs, cs)
            return
        n_r, n_c = size(hp, s - level), size(wp, s - level)
        rs = _back_conv(rs, 3, 1, 1, n_r)
        cs = _back_conv(cs, 3, 1, 1, n_c)
        if config.skips:
            enc(s - level, rs, cs)
        dec(level - 1, (rs[0] // 2, rs[1] // 2), (cs[0] // 2, cs[1] // 2))

    r, c = pixel
    dec(s, _back_conv((r, r), 3, 1, 1, hp), _back_conv((c, c), 3, 1, 1, wp))
    # fold reflect-padded coordinates back onto the original image
    rows = _reflect_index(h, hp)
    cols = _reflect_index(w, wp)
    out = np.zeros((h, w), dtype=bool)
    rr, cc = np.nonzero(mask)
    out[rows[rr], cols[cc]] = True
    return out


def save_model(model: MattingModel, path) -> None:
    save_archive(path, model.state(), meta={"config": network_to_dict(model.config), "blocks": model.block_names()})


def load_model(path) -> MattingModel:
    tensors, meta = load_archive(path)
    if "config" not in meta:
        raise ValueError(f"{path}: checkpoint manifest has no network config")
    model = build(network_from_dict(meta["config"]))
    model.load_state(tensors)
    return model
