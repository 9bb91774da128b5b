"""Dice loss, the AdaGrad optimizer, the training loop, and evaluation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .arch import MimModel
from .checkpoint import save_checkpoint
from .data import Sample, to_mask_batch, to_model_input
from .metrics import MetricsReport, evaluate_masks
from .tensor import Tensor, grad_of


class TrainingDiverged(RuntimeError):
    """The loss became non-finite; carries the failing step in the message."""


@dataclass
class TrainConfig:
    lr: float = 0.06
    weight_decay: float = 0.0004
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    dice_eps: float = 1.0
    checkpoint_every: int = 0  # epochs; 0 = final checkpoint only

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or self.weight_decay < 0 or self.dice_eps < 0:
            raise ValueError("epochs, weight_decay and dice_eps must be non-negative")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown train config keys: {unknown}")
        return cls(**data).validate()


def dice_loss(probs: Tensor, gt: Tensor, eps: float = 1.0) -> Tensor:
    """Soft Dice over all pixels in the batch: 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps)."""
    if probs.shape != gt.shape:
        raise T.ShapeError(f"dice_loss shapes differ: {probs.shape} vs {gt.shape}")
    if T.debug_checks_enabled():
        lo, hi = probs.data.min(), probs.data.max()
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise ValueError(f"dice_loss probabilities outside [0, 1]: [{lo}, {hi}]")
    inter = (probs * gt).sum()
    denom = probs.sum() + gt.sum()
    return 1.0 - (2.0 * inter + eps) / (denom + eps)


@dataclass
class AdaGrad:
    """Accumulated squared-gradient optimizer with loss-coupled L2 decay.

    Update: g = grad + wd*param; acc += g^2; param -= lr * g / (sqrt(acc) + eps).
    """

    lr: float = 0.06
    weight_decay: float = 0.0004
    eps: float = 1e-10
    accumulators: dict[int, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def step(self, params) -> None:
        self.step_count += 1
        with T.no_grad():
            for p in params:
                g = grad_of(p)
                if self.weight_decay:
                    g = g + self.weight_decay * p.data
                acc = self.accumulators.get(id(p))
                if acc is None:
                    acc = np.zeros_like(p.data)
                    self.accumulators[id(p)] = acc
                acc += g * g
                p.data -= self.lr * g / (np.sqrt(acc) + self.eps)


@dataclass
class TrainResult:
    history: list[tuple[int, float]]
    steps: int
    checkpoint_prefix: Path | None = None


def train(model: MimModel, samples: list[Sample], cfg: TrainConfig,
          out_dir=None, log_fn=None, max_steps: int | None = None) -> TrainResult:
    """Seeded, deterministic training of ``model`` on ``samples``.

    Per-epoch order is a deterministic shuffle; batches are consecutive
    slices (the last one may be short).  ``max_steps`` additionally caps the
    total number of optimizer steps.  A non-finite loss aborts.
    """
    cfg.validate()
    if not samples:
        raise ValueError("training needs at least one sample")
    model.train()
    dtype = model.cfg.dtype
    opt = AdaGrad(lr=cfg.lr, weight_decay=cfg.weight_decay)
    params = model.parameters()
    rng = np.random.default_rng(cfg.seed)
    history: list[tuple[int, float]] = []
    step = 0
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_prefix = out_dir / "checkpoint" if out_dir else None

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(samples), cfg.batch_size):
            if max_steps is not None and step >= max_steps:
                break
            batch = [samples[i] for i in order[start:start + cfg.batch_size]]
            images = Tensor(to_model_input(batch, dtype))
            masks = Tensor(to_mask_batch(batch, dtype).reshape(len(batch), 1,
                                                               *batch[0].mask.shape))
            model.zero_grad()
            logits = model(images)
            loss = dice_loss(T.sigmoid(logits), masks, eps=cfg.dice_eps)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDiverged(f"non-finite loss {loss_val} at step {step} (epoch {epoch})")
            T.backward(loss)
            opt.step(params)
            step += 1
            history.append((step, loss_val))
            if log_fn is not None:
                log_fn(step, loss_val)
        if ckpt_prefix and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model.state_arrays(), ckpt_prefix)

    if ckpt_prefix:
        save_checkpoint(model.state_arrays(), ckpt_prefix)
        write_history_csv(out_dir / "history.csv", history)
    return TrainResult(history=history, steps=step, checkpoint_prefix=ckpt_prefix)


def write_history_csv(path, history) -> None:
    lines = ["step,loss"] + [f"{s},{v!r}" for s, v in history]
    Path(path).write_text("\n".join(lines) + "\n")


def predict_probs(model: MimModel, samples: list[Sample], batch_size: int = 4) -> list[np.ndarray]:
    """Sigmoid probability maps for each sample, batched, without gradients."""
    model.eval()
    dtype = model.cfg.dtype
    probs: list[np.ndarray] = []
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            logits = model(Tensor(to_model_input(chunk, dtype)))
            batch_probs = T.sigmoid(logits).data[:, 0]
            probs.extend(np.ascontiguousarray(m) for m in batch_probs)
    return probs


def evaluate(model: MimModel, samples: list[Sample], threshold: float = 0.5,
             n_thresholds: int = 33, batch_size: int = 4) -> MetricsReport:
    """Forward + sigmoid over the samples, then the full metrics report."""
    probs = predict_probs(model, samples, batch_size=batch_size)
    gts = [s.mask for s in samples]
    return evaluate_masks(probs, gts, threshold=threshold, n_thresholds=n_thresholds)


def save_run_config(out_dir, model_cfg, train_cfg: TrainConfig, seed: int) -> None:
    merged = {**model_cfg.to_dict(), **train_cfg.to_dict(), "seed": seed}
    (Path(out_dir) / "run_config.json").write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n")
