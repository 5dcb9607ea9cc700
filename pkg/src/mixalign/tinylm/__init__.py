"""Desk-scale autoregressive LM: exact likelihoods, hand-rolled gradients, optimizers."""

from .checkpoint import ModelCheckpoint, init_model, load_checkpoint, save_checkpoint
from .losses import (
    CROSS_ENTROPY,
    DISTILL_KL,
    DISTILL_KL_PLUS_CE,
    LOSS_KINDS,
    LossSpec,
    cross_entropy_grad,
    distill_grad,
    distill_loss,
)
from .model import (
    ModelConfig,
    batch_mean_ll,
    grad_log_prob,
    log_prob,
    param_layout,
    param_views,
)
from .optim import (
    ADAMW_BETA1,
    ADAMW_BETA2,
    ADAMW_EPS,
    ADAMW_WEIGHT_DECAY,
    LRSchedule,
    adamw_step,
    lr_at,
    sgd_step,
)

__all__ = [
    "ADAMW_BETA1",
    "ADAMW_BETA2",
    "ADAMW_EPS",
    "ADAMW_WEIGHT_DECAY",
    "CROSS_ENTROPY",
    "DISTILL_KL",
    "DISTILL_KL_PLUS_CE",
    "LOSS_KINDS",
    "LRSchedule",
    "LossSpec",
    "ModelCheckpoint",
    "ModelConfig",
    "adamw_step",
    "batch_mean_ll",
    "cross_entropy_grad",
    "distill_grad",
    "distill_loss",
    "grad_log_prob",
    "init_model",
    "load_checkpoint",
    "log_prob",
    "lr_at",
    "param_layout",
    "param_views",
    "save_checkpoint",
    "sgd_step",
]
