"""Adam, the warmup + cosine schedule, and the pretrain / finetune drivers."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import ShotWindow, augment_windows, stack_frames
from .losses import (batch_boundary_loss, batch_contrastive_loss, finetune_loss,
                     pseudo_boundary, pretrain_objective)
from .metrics import EvalReport, evaluate_scores
from .model import TranS4mer, save_checkpoint
from .nn import Module
from .tensor import NonFiniteError


@dataclass
class OptState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-6
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, opt: OptState, lr: float, module: Module | None = None) -> None:
    """One bias-corrected Adam update with decoupled weight decay.

    ``params`` is a list of ``(name, tensor)`` pairs or tensors. If any gradient
    is non-finite nothing is modified and :class:`NonFiniteError` is raised.
    After the update ``module.constrain_()`` re-imposes parameter constraints.
    """
    pairs = [(str(i), p) if not isinstance(p, tuple) else p for i, p in enumerate(params)]
    for name, p in pairs:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient in {name}")
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for name, p in pairs:
        if p.grad is None:
            continue
        g = p.grad
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(p.data)
            opt.v[name] = np.zeros_like(p.data)
        v = opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        if opt.weight_decay:
            update += opt.weight_decay * p.data
        p.data -= (lr * update).astype(p.dtype, copy=False)
    if module is not None:
        module.constrain_()


@dataclass
class Schedule:
    base_lr: float
    warmup_steps: int
    total_steps: int
    min_lr: float = 0.0

    def __post_init__(self):
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps must not exceed total_steps")


def lr_at(sched: Schedule, step: int) -> float:
    """Linear warmup from 0 to ``base_lr``, then cosine decay to ``min_lr``."""
    if step < sched.warmup_steps:
        return sched.base_lr * step / sched.warmup_steps
    span = sched.total_steps - sched.warmup_steps
    progress = 1.0 if span <= 0 else min(1.0, (step - sched.warmup_steps) / span)
    return sched.min_lr + (sched.base_lr - sched.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 16
    lr: float = 3e-4
    min_lr: float = 0.0
    warmup_epochs: float = 1.0
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # None: negatives/positives of the training windows
    w_pos: float | None = None
    seed: int = 0
    dtype: str = "float32"
    augment: bool = False

    @classmethod
    def from_json(cls, d: dict) -> TrainConfig:
        return cls(**d)

    def to_json(self) -> dict:
        return asdict(self)


PRETRAIN_DEFAULTS = TrainConfig(epochs=5, lr=3e-4, augment=True)
FINETUNE_DEFAULTS = TrainConfig(epochs=10, lr=1e-3, augment=True)


class JsonLog:
    """JSON-lines training log; also kept in memory."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self._fh = open(path, "w") if path else None

    def write(self, **rec) -> None:
        self.records.append(rec)
        if self._fh:
            self._fh.write(json.dumps(rec) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()


@dataclass
class TrainResult:
    model: TranS4mer
    log: list[dict]
    epoch_losses: list[float]
    checkpoint: Path | None = None


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def _setup(windows, hyper: TrainConfig):
    if not windows:
        raise ValueError("dataset is empty")
    dtype = np.dtype(hyper.dtype).type
    frames = stack_frames(windows).astype(dtype, copy=False)
    steps_per_epoch = math.ceil(len(windows) / hyper.batch_size)
    total = steps_per_epoch * hyper.epochs
    sched = Schedule(hyper.lr, min(total, round(hyper.warmup_epochs * steps_per_epoch)), total, hyper.min_lr)
    opt = OptState(hyper.beta1, hyper.beta2, hyper.eps, hyper.weight_decay)
    return frames, sched, opt


def _epoch_end(model, out_dir, epoch, log_name):
    if out_dir is None:
        return None
    path = Path(out_dir) / f"{log_name}_epoch{epoch + 1:03d}.ts4m"
    save_checkpoint(path, model)
    save_checkpoint(Path(out_dir) / f"{log_name}_last.ts4m", model)
    return path


def shot_features(model: TranS4mer, frames: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Contrastive-head projections of every shot, ``[W, N, D_r]``, without gradients."""
    out = []
    with T.no_grad():
        for start in range(0, len(frames), batch_size):
            reprs, _ = model(frames[start:start + batch_size])
            out.append(reprs.data.astype(np.float64))
    return np.concatenate(out)


def predict_center(model: TranS4mer, frames: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Centre-shot boundary probabilities, one per window."""
    c = model.cfg.center
    out = []
    with T.no_grad():
        for start in range(0, len(frames), batch_size):
            _, logits = model(frames[start:start + batch_size])
            out.append(logits.data[:, c].astype(np.float64))
    z = np.concatenate(out)
    return 1.0 / (1.0 + np.exp(-z))


def pretrain(windows: list[ShotWindow], model: TranS4mer, hyper: TrainConfig = PRETRAIN_DEFAULTS,
             out_dir=None, log_path=None) -> TrainResult:
    """Self-supervised pretraining with pseudo-boundaries.

    Pseudo-boundaries come from the model's own shot projections and are
    refreshed at the start of every epoch.
    """
    frames, sched, opt = _setup(windows, hyper)
    rng = np.random.default_rng(hyper.seed)
    log = JsonLog(log_path)
    params = list(model.named_parameters())
    epoch_losses, ckpt = [], None
    try:
        for epoch in range(hyper.epochs):
            feats = shot_features(model, frames)
            splits = [pseudo_boundary(f) for f in feats]
            losses = []
            for idx in _batches(len(windows), hyper.batch_size, rng):
                t0 = time.perf_counter()
                lr = lr_at(sched, opt.step)
                batch = augment_windows(frames[idx], rng) if hyper.augment else frames[idx]
                reprs, logits = model(batch)
                batch_splits = [splits[i] for i in idx]
                lc = batch_contrastive_loss(reprs, batch_splits)
                lb = batch_boundary_loss(logits, batch_splits, rng)
                loss = pretrain_objective(lc, lb)
                model.zero_grad()
                T.backward(loss)
                adam_step(params, opt, lr, model)
                losses.append(loss.item())
                log.write(step=opt.step, epoch=epoch, split="pretrain", loss=loss.item(),
                          loss_contrastive=lc.item(), loss_boundary=lb.item(), lr=lr,
                          wall_ms=1e3 * (time.perf_counter() - t0))
            epoch_losses.append(float(np.mean(losses)))
            ckpt = _epoch_end(model, out_dir, epoch, "pretrain")
    finally:
        log.close()
    model.zero_grad()
    return TrainResult(model, log.records, epoch_losses, ckpt)


def positive_weight(windows: list[ShotWindow]) -> float:
    pos = sum(w.center_label for w in windows)
    return (len(windows) - pos) / pos if pos else 1.0


def finetune(windows: list[ShotWindow], model: TranS4mer, hyper: TrainConfig = FINETUNE_DEFAULTS,
             out_dir=None, log_path=None) -> TrainResult:
    """Supervised finetuning with BCE on the centre-shot boundary logit."""
    frames, sched, opt = _setup(windows, hyper)
    labels = np.array([w.center_label for w in windows])
    w_pos = positive_weight(windows) if hyper.w_pos is None else hyper.w_pos
    rng = np.random.default_rng(hyper.seed)
    log = JsonLog(log_path)
    params = list(model.named_parameters())
    c = model.cfg.center
    epoch_losses, ckpt = [], None
    try:
        for epoch in range(hyper.epochs):
            losses = []
            for idx in _batches(len(windows), hyper.batch_size, rng):
                t0 = time.perf_counter()
                lr = lr_at(sched, opt.step)
                batch = augment_windows(frames[idx], rng) if hyper.augment else frames[idx]
                _, logits = model(batch)
                loss = finetune_loss(logits[:, c], labels[idx], w_pos)
                model.zero_grad()
                T.backward(loss)
                adam_step(params, opt, lr, model)
                losses.append(loss.item())
                log.write(step=opt.step, epoch=epoch, split="finetune", loss=loss.item(),
                          loss_contrastive=None, loss_boundary=None, lr=lr,
                          wall_ms=1e3 * (time.perf_counter() - t0))
            epoch_losses.append(float(np.mean(losses)))
            ckpt = _epoch_end(model, out_dir, epoch, "finetune")
    finally:
        log.close()
    model.zero_grad()
    return TrainResult(model, log.records, epoch_losses, ckpt)


def evaluate(model: TranS4mer, windows: list[ShotWindow], threshold: float = 0.5,
             symmetric_miou: bool = True) -> EvalReport:
    if not windows:
        raise ValueError("dataset is empty")
    dtype = model.parameters()[0].dtype
    probs = predict_center(model, stack_frames(windows).astype(dtype, copy=False))
    return evaluate_scores(probs, [w.center_label for w in windows],
                           [w.clip_id for w in windows], [w.window_id for w in windows], threshold, symmetric_miou)
