"""SGD-ascent, AdamW with decoupled weight decay, and the cosine LR schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError

ADAMW_BETA1 = 0.9
ADAMW_BETA2 = 0.95
ADAMW_EPS = 1e-8
ADAMW_WEIGHT_DECAY = 0.1


@dataclass(frozen=True)
class LRSchedule:
    warmup_steps: int
    total_steps: int
    lr_max: float
    lr_min: float

    def __post_init__(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ContractError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}/{self.total_steps}"
            )
        if not 0 < self.lr_min <= self.lr_max:
            raise ContractError(f"need 0 < lr_min <= lr_max, got {self.lr_min}/{self.lr_max}")


def lr_at(schedule: LRSchedule, step: int) -> float:
    """Linear ramp 0 -> lr_max over warmup, then cosine decay lr_max -> lr_min."""
    if not 0 <= step <= schedule.total_steps:
        raise ContractError(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.lr_max * step / schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return schedule.lr_min + (schedule.lr_max - schedule.lr_min) * 0.5 * (
        1.0 + math.cos(math.pi * progress)
    )


def _check_dims(model, gradient):
    if gradient.shape != model.params.shape:
        raise ContractError(
            f"gradient length {gradient.shape} does not match params {model.params.shape}"
        )


def sgd_step(model, gradient: np.ndarray, lr: float):
    """Ascent step theta <- theta + lr * gradient; gradient points uphill."""
    _check_dims(model, gradient)
    if lr < 0:
        raise ContractError(f"lr must be >= 0, got {lr}")
    return model.replace(params=model.params + lr * gradient, step=model.step + 1)


def adamw_step(
    model,
    gradient: np.ndarray,
    lr: float,
    beta1: float = ADAMW_BETA1,
    beta2: float = ADAMW_BETA2,
    eps: float = ADAMW_EPS,
    weight_decay: float = ADAMW_WEIGHT_DECAY,
):
    """Descent step on the loss whose gradient is given; decoupled weight decay.

    Moments live in opt_state and are bias-corrected by the optimizer's own
    step counter t, which counts adamw_step calls on this checkpoint chain.
    """
    _check_dims(model, gradient)
    if lr < 0:
        raise ContractError(f"lr must be >= 0, got {lr}")
    state = model.opt_state
    m = state["m"] if state else np.zeros_like(model.params)
    v = state["v"] if state else np.zeros_like(model.params)
    t = state["t"] + 1 if state else 1
    m = beta1 * m + (1.0 - beta1) * gradient
    v = beta2 * v + (1.0 - beta2) * gradient * gradient
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    params = model.params - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * model.params)
    return model.replace(params=params, step=model.step + 1, opt_state={"m": m, "v": v, "t": t})
