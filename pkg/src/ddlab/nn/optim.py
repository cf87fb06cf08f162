"""Plain SGD and the two width-sweep learning-rate schedules."""

from __future__ import annotations

import math

import numpy as np

SCHEDULES = ("simplefc", "cnn")


def lr_at(schedule: str, epoch: int, initial_lr: float = 0.05) -> float:
    """Learning rate at a zero-based epoch.

    simplefc decays stepwise: initial / sqrt(1 + floor(epoch / 50)).
    cnn decays every epoch: initial / sqrt(1 + epoch * 10).
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if schedule == "simplefc":
        return initial_lr / math.sqrt(1 + epoch // 50)
    if schedule == "cnn":
        return initial_lr / math.sqrt(1 + epoch * 10)
    raise ValueError(f"unknown schedule {schedule!r}, expected one of {SCHEDULES}")


def sgd_step(params, grads, lr: float, check_finite: bool = True):
    """In-place update p <- p - lr * g for every parameter array."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params vs {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs gradient {g.shape}")
        if check_finite and not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient")
    for p, g in zip(params, grads):
        p -= lr * g
    return params


def sgd_momentum_step(params, grads, velocities, lr: float, momentum: float):
    """Classic momentum: v <- mu*v + g; p <- p - lr*v. Used only when mu > 0."""
    for p, g, v in zip(params, grads, velocities):
        v *= momentum
        v += g
        p -= lr * v
    return params
