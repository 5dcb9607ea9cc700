"""Training objectives: cross-entropy and teacher distillation losses.

All losses are token means over the batch and oriented as descent objectives
(feed their gradients to adamw_step). KL is KL(teacher_t || student_t) per
position, matching a student that should cover the teacher's predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from . import model as _model

CROSS_ENTROPY = "cross_entropy"
DISTILL_KL = "distill_kl"
DISTILL_KL_PLUS_CE = "distill_kl_plus_ce"
LOSS_KINDS = (CROSS_ENTROPY, DISTILL_KL, DISTILL_KL_PLUS_CE)


@dataclass(frozen=True)
class LossSpec:
    kind: str
    teacher: object = None  # ModelCheckpoint when kind is a distill loss

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ContractError(f"unknown loss kind {self.kind!r}, expected one of {LOSS_KINDS}")
        if (self.teacher is None) != (self.kind == CROSS_ENTROPY):
            raise ContractError("teacher is required exactly when the loss distills")

    def check_vocab(self, student_config):
        if self.teacher is not None and self.teacher.config.vocab != student_config.vocab:
            raise ContractError(
                f"teacher vocab {self.teacher.config.vocab} != student vocab "
                f"{student_config.vocab}; distillation needs a shared vocabulary"
            )


def _forward_probs(checkpoint, seqs):
    cfg = checkpoint.config
    params = _model.param_views(checkpoint.params, cfg)
    logits, cache = _model.forward(params, cfg, seqs)
    lsm = _model._log_softmax(logits)
    return params, cfg, lsm, np.exp(lsm), cache


def distill_loss(student, teacher, batch, loss: LossSpec) -> float:
    """Value of the distillation objective; token mean, nats."""
    loss.check_vocab(student.config)
    seqs = batch.sequences
    B, T = seqs.shape
    _, _, s_lsm, _, _ = _forward_probs(student, seqs)
    _, _, t_lsm, t_probs, _ = _forward_probs(teacher, seqs)
    kl = float((t_probs * (t_lsm - s_lsm)).sum(axis=-1).mean())
    if loss.kind == DISTILL_KL:
        return kl
    picked = s_lsm[np.arange(B)[:, None], np.arange(T)[None, :], seqs]
    return kl - float(picked.mean())


def distill_grad(student, teacher, batch, loss: LossSpec) -> np.ndarray:
    """Descent gradient of the distillation objective w.r.t. student params."""
    if loss.kind == CROSS_ENTROPY:
        raise ContractError("distill_grad needs a distill loss kind")
    loss.check_vocab(student.config)
    seqs = batch.sequences
    B, T = seqs.shape
    s_params, s_cfg, s_lsm, s_probs, cache = _forward_probs(student, seqs)
    _, _, _, t_probs, _ = _forward_probs(teacher, seqs)

    # d/dz of token-mean KL(t || s) is (softmax(z) - t) / (B*T)
    dlogits = s_probs - t_probs
    if loss.kind == DISTILL_KL_PLUS_CE:
        dlogits += s_probs
        np.add.at(dlogits, (np.arange(B)[:, None], np.arange(T)[None, :], seqs), -1.0)
    dlogits /= B * T

    flat = np.zeros_like(student.params)
    grads = _model.param_views(flat, s_cfg)
    _model.backward(s_params, s_cfg, dlogits, cache, grads)
    return flat


def cross_entropy_grad(model, batch) -> tuple:
    """Descent gradient of token-mean NLL and its value; AdamW-ready."""
    ascent, mean_ll = _model.grad_log_prob(model, batch)
    return -ascent, -mean_ll
