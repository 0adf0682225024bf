"""Adam training loop with step-decayed learning rate."""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from .errors import DimensionError, NumericError
from .model import Batch, ModelParams, ensemble_loss, model_forward

DEFAULT_EPOCHS = {"anticipation": 15, "recognition": 25, "activity": 25}


@dataclass
class TrainConfig:
    batch_size: int = 10
    lr0: float = 1e-4
    dropout: float = 0.3
    epochs: int = 15
    decay_every: int = 10
    decay_divisor: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.decay_every < 1 or self.decay_divisor < 1:
            raise ValueError(f"batch size, epochs and decay settings must be positive: {self}")
        if self.lr0 <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr0}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainConfig":
        return cls(**{"epochs": DEFAULT_EPOCHS[task], **overrides})


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    train_acc: float
    batches: int


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """lr0 divided by decay_divisor once per completed block of decay_every epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    # divide rather than multiply by 0.1**n: 1e-4 / 100 is exactly 1e-6, 1e-4 * 0.01 is not
    return cfg.lr0 / cfg.decay_divisor ** (epoch // cfg.decay_every)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> None:
    """Bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        tmp = np.empty_like(p)
        m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        m += tmp
        v *= b2
        np.square(g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / c1
        p -= tmp


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(params: ModelParams, data: Batch, labels: np.ndarray, cfg: TrainConfig,
                state: AdamState, epoch: int, rng: np.random.Generator) -> EpochStats:
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    labels = np.asarray(labels)
    lr = lr_at(epoch, cfg)
    weights = params.state_dict()
    total_loss, correct = 0.0, 0
    batches = minibatches(n, cfg.batch_size, rng)
    for idx in batches:
        params.zero_grad()
        out = model_forward(params, data.take(idx), train=True, rng=rng)
        loss = ensemble_loss(out, labels[idx])
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(
                f"non-finite loss {value} at epoch {epoch}, step {state.step}, lr {lr:g}; "
                f"batch rows {idx.tolist()}")
        loss.backward()
        grads = {k: t.grad for k, t in params.tensors.items() if t.grad is not None}
        adam_step(weights, grads, state, lr)
        total_loss += value * len(idx)
        correct += int((out.ensemble_probs.data.argmax(axis=1) == labels[idx]).sum())
    params.zero_grad()
    return EpochStats(epoch, lr, total_loss / n, 100.0 * correct / n, len(batches))


class EpochLog:
    """Writes one JSON record per epoch to a stream and, optionally, a log file."""

    def __init__(self, path=None, stream: TextIO | None = sys.stdout):
        self.path = path
        self.stream = stream
        if path is not None:
            open(path, "w").close()

    def __call__(self, stats: EpochStats) -> None:
        rec = {"epoch": stats.epoch, "lr": stats.lr, "loss": stats.loss,
               "train_acc": stats.train_acc}
        line = json.dumps(rec)
        if self.stream is not None:
            print(line, file=self.stream, flush=True)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(line + "\n")


def fit(params: ModelParams, data: Batch, labels: np.ndarray, cfg: TrainConfig,
        log: Callable[[EpochStats], None] | None = None,
        on_epoch_end: Callable[[int, ModelParams, AdamState, np.random.Generator], None] | None = None,
        state: AdamState | None = None, rng: np.random.Generator | None = None,
        start_epoch: int = 0) -> list[EpochStats]:
    """Train for ``cfg.epochs`` epochs; one seeded generator drives shuffling and dropout."""
    if params.config.dropout != cfg.dropout:
        raise ValueError(f"model dropout {params.config.dropout} differs from train dropout {cfg.dropout}")
    state = state or AdamState()
    rng = rng or np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(start_epoch, cfg.epochs):
        stats = train_epoch(params, data, labels, cfg, state, epoch, rng)
        history.append(stats)
        if log is not None:
            log(stats)
        if on_epoch_end is not None:
            on_epoch_end(epoch, params, state, rng)
    return history
