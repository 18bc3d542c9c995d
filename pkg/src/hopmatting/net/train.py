"""Adam training loop with linear warmup and cosine decay."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..augment import ALL_METHODS, CompSample, InterpMethod, augment_sample
from ..autodiff import GradTape, backward
from .config import TrainSchedule
from .model import MattingModel, forward_batch, loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def lr_at(step: int, schedule: TrainSchedule) -> float:
    """Linear ramp from 0 over the warmup, then cosine decay to 0 at ``total_steps``."""
    total, warm, base = schedule.total_steps, schedule.warmup_steps, schedule.base_lr
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if step < warm:
        return base * step / warm
    if total == warm:
        return base
    progress = (step - warm) / (total - warm)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class LossRecord:
    step: int
    lr: float
    loss: float


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _augment_methods(schedule: TrainSchedule):
    if schedule.augment == "random":
        return ALL_METHODS
    return (InterpMethod.parse(schedule.augment_method),)


def _batch(samples: Sequence[CompSample]):
    return (
        np.stack([s.composite for s in samples]),
        np.stack([s.trimap for s in samples]),
        np.stack([s.alpha for s in samples]),
    )


def train(model: MattingModel, dataset: Sequence[CompSample], schedule: TrainSchedule,
          rng: np.random.Generator) -> tuple[MattingModel, list[LossRecord]]:
    """Optimise ``model`` in place; returns it with the per-step loss curve.

    Each step draws ``batch_size`` samples with replacement from ``dataset``,
    optionally re-augments them, and takes one Adam step at ``lr_at(step)``.
    The recorded loss is the unknown-region L1 error of the clamped alpha;
    the gradient comes from the same error on the unclamped output.
    """
    schedule.validate()
    if not dataset:
        raise TrainingError("training dataset is empty")
    params = model.parameters()
    opt = Adam(params, schedule.beta1, schedule.beta2, schedule.eps)
    methods = _augment_methods(schedule)
    curve: list[LossRecord] = []
    for step in range(schedule.total_steps):
        idx = rng.integers(len(dataset), size=schedule.batch_size)
        batch = [dataset[i] for i in idx]
        if schedule.augment != "none":
            batch = [augment_sample(s, rng, methods) for s in batch]
        images, trimaps, alphas = _batch(batch)
        with GradTape() as tape:
            raw = forward_batch(model, images, trimaps, clamp=False)
            objective = loss(raw, alphas, trimaps)
        lv = float(loss(np.clip(raw.data, 0.0, 1.0), alphas, trimaps).data)
        if not math.isfinite(lv):
            raise TrainingError(f"non-finite loss {lv} at step {step} (lr={lr_at(step, schedule):.3g})")
        grads = backward(tape, output=objective)
        lr = lr_at(step, schedule)
        flat = [grads.get(p, np.zeros_like(p.data)) for p in params]
        # relu maps NaN to 0, so a blown-up model can still report a finite loss
        bad = [p.name for p, g in zip(params, flat) if not np.all(np.isfinite(g))]
        bad += [p.name for p in params if not np.all(np.isfinite(p.data))]
        if bad:
            raise TrainingError(f"non-finite gradient or parameter at step {step} (lr={lr:.3g}): {sorted(set(bad))[:4]}")
        opt.step(flat, lr)
        curve.append(LossRecord(step, lr, lv))
        if step % 50 == 0:
            log.info("step %d lr %.3g loss %.4f", step, lr, lv)
    return model, curve


def write_curve(curve: Sequence[LossRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "loss"])
        for r in curve:
            w.writerow([r.step, repr(r.lr), repr(r.loss)])
