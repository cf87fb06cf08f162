"""Mini-batch SGD training loop with per-epoch metric traces."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .loss import cross_entropy
from .optim import lr_at, sgd_momentum_step, sgd_step


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the epoch index."""

    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 128
    lr_schedule: str = "simplefc"
    initial_lr: float = 0.05
    momentum: float = 0.0
    seed: int = 0
    shuffle_per_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_error: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    test_loss: float = float("nan")
    test_error: float = float("nan")


def evaluate(model, images, labels, batch_size: int = 512) -> tuple[float, float]:
    """Eval-mode loss and error of a model on a labeled image set."""
    total_loss = 0.0
    wrong = 0
    n = images.shape[0]
    x = images.astype(model.dtype, copy=False)
    for start in range(0, n, batch_size):
        xb = x[start:start + batch_size]
        yb = labels[start:start + batch_size]
        logits, _ = model.forward(xb, "eval")
        loss, _ = cross_entropy(logits, yb)
        total_loss += loss * xb.shape[0]
        wrong += int((logits.argmax(axis=1) != yb).sum())
    return total_loss / n, wrong / n


def train(model, ds, test_ds, cfg: TrainConfig):
    """Run cfg.epochs of shuffled mini-batch SGD; returns (model, history).

    Training targets are the assigned (possibly noisy) labels; the final test
    metrics are measured against the test set's true labels. The per-epoch
    trace accumulates each batch's loss/error from the forward pass that fed
    the update, so the very first recorded batch reflects the freshly
    initialized model.
    """
    x = ds.images.astype(model.dtype, copy=False)
    y = ds.assigned_labels
    n = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    params = model.params
    velocities = [np.zeros_like(p) for p in params] if cfg.momentum > 0 else None
    history = TrainHistory()

    for epoch in range(cfg.epochs):
        tick = time.perf_counter()
        lr = lr_at(cfg.lr_schedule, epoch, cfg.initial_lr)
        order = rng.permutation(n) if cfg.shuffle_per_epoch else np.arange(n)
        loss_sum = 0.0
        wrong = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            logits, caches = model.forward(xb, "train")
            loss, grad_logits = cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, f"non-finite training loss {loss}")
            grads = model.backward(caches, grad_logits)
            if velocities is None:
                sgd_step(params, grads, lr, check_finite=False)
            else:
                sgd_momentum_step(params, grads, velocities, lr, cfg.momentum)
            loss_sum += loss * idx.shape[0]
            wrong += int((logits.argmax(axis=1) != yb).sum())
        history.train_loss.append(loss_sum / n)
        history.train_error.append(wrong / n)
        history.epoch_seconds.append(time.perf_counter() - tick)

    history.test_loss, history.test_error = evaluate(model, test_ds.images, test_ds.true_labels)
    return model, history


def write_history_csv(history: TrainHistory, path) -> None:
    """Per-epoch rows; the final row also carries the test metrics."""
    lines = ["epoch,train_loss,train_error,test_loss,test_error,seconds"]
    last = len(history.train_loss) - 1
    for e, (tl, te, sec) in enumerate(
        zip(history.train_loss, history.train_error, history.epoch_seconds)
    ):
        tail = f"{history.test_loss!r},{history.test_error!r}" if e == last else ","
        lines.append(f"{e},{tl!r},{te!r},{tail},{sec!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
