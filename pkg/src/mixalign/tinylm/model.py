"""Decoder-only transformer at desk scale, in plain numpy.

Pre-LN GPT blocks, learned positional embeddings, untied output head. All
arithmetic is float64 so analytic gradients can be checked against central
finite differences. Position 0 is conditioned on a fixed all-zero BOS
embedding (plus the learned position-0 embedding), so a window of T tokens
yields exactly T scored positions.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, InputError, NumericalError

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = 256
    layers: int = 2
    heads: int = 2
    embed_dim: int = 64
    context_length: int = 256

    def __post_init__(self):
        if self.vocab < 2:
            raise ContractError(f"vocab must be >= 2, got {self.vocab}")
        if self.layers < 1 or self.heads < 1:
            raise ContractError("layers and heads must be >= 1")
        if self.embed_dim % self.heads != 0:
            raise ContractError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.context_length < 2:
            raise ContractError(f"context_length must be >= 2, got {self.context_length}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in param_layout(self))

    def to_json(self) -> dict:
        return {
            "vocab": self.vocab,
            "layers": self.layers,
            "heads": self.heads,
            "embed_dim": self.embed_dim,
            "context_length": self.context_length,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in obj.items()})

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.blake2b(blob.encode(), digest_size=16).hexdigest()


def param_layout(cfg: ModelConfig) -> list:
    """Ordered (name, shape) pairs defining the flat parameter vector."""
    d, v, c = cfg.embed_dim, cfg.vocab, cfg.context_length
    layout = [("wte", (v, d)), ("wpe", (c, d))]
    for layer in range(cfg.layers):
        p = f"h{layer}."
        layout += [
            (p + "ln1.g", (d,)),
            (p + "ln1.b", (d,)),
            (p + "attn.w_qkv", (d, 3 * d)),
            (p + "attn.b_qkv", (3 * d,)),
            (p + "attn.w_o", (d, d)),
            (p + "attn.b_o", (d,)),
            (p + "ln2.g", (d,)),
            (p + "ln2.b", (d,)),
            (p + "mlp.w1", (d, 4 * d)),
            (p + "mlp.b1", (4 * d,)),
            (p + "mlp.w2", (4 * d, d)),
            (p + "mlp.b2", (d,)),
        ]
    layout += [("lnf.g", (d,)), ("lnf.b", (d,)), ("head.w", (d, v)), ("head.b", (v,))]
    return layout


def param_views(flat: np.ndarray, cfg: ModelConfig) -> dict:
    """Named reshaped views into the flat vector; writes propagate."""
    views = {}
    offset = 0
    for name, shape in param_layout(cfg):
        size = int(np.prod(shape))
        views[name] = flat[offset : offset + size].reshape(shape)
        offset += size
    if offset != len(flat):
        raise ContractError(f"flat vector has {len(flat)} entries, layout needs {offset}")
    return views


def init_params(cfg: ModelConfig, gen: np.random.Generator) -> np.ndarray:
    """Weights N(0, 0.02), biases and LN offsets 0, LN gains 1; registry order."""
    flat = np.zeros(cfg.param_count)
    views = param_views(flat, cfg)
    for name, shape in param_layout(cfg):
        kind = name.rsplit(".", 1)[-1]
        if kind == "g":
            views[name][:] = 1.0
        elif kind.startswith("b"):
            continue
        else:
            views[name][:] = 0.02 * gen.standard_normal(shape)
    return flat


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * rstd
    return g * xhat + b, (xhat, rstd, g)


def _layer_norm_back(dout, cache):
    xhat, rstd, g = cache
    dg = (dout * xhat).sum(axis=(0, 1))
    db = dout.sum(axis=(0, 1))
    dxhat = dout * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = rstd * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _gelu(h):
    u = _GELU_C * (h + 0.044715 * h**3)
    t = np.tanh(u)
    return 0.5 * h * (1.0 + t), t


def _gelu_back(dout, h, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * h**2)
    return dout * (0.5 * (1.0 + t) + 0.5 * h * (1.0 - t * t) * du)


def forward(params: dict, cfg: ModelConfig, seqs: np.ndarray):
    """Logits for every position of each window.

    seqs holds the T target tokens per window; the model input is the zero BOS
    vector followed by the first T-1 targets, shifted under learned position
    embeddings. Returns (logits (B,T,V), cache for backward).
    """
    B, T = seqs.shape
    if T > cfg.context_length:
        raise ContractError(f"window length {T} exceeds context {cfg.context_length}")
    if seqs.max(initial=0) >= cfg.vocab:
        raise InputError(f"token {int(seqs.max())} outside vocabulary of {cfg.vocab}")
    d, H, hd = cfg.embed_dim, cfg.heads, cfg.head_dim

    x = np.zeros((B, T, d))
    x[:, 0, :] = params["wpe"][0]
    if T > 1:
        x[:, 1:, :] = params["wte"][seqs[:, :-1]] + params["wpe"][1:T]

    mask = np.tril(np.ones((T, T), dtype=bool))
    scale = 1.0 / math.sqrt(hd)
    caches = []
    for layer in range(cfg.layers):
        p = f"h{layer}."
        a, ln1c = _layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        qkv = a @ params[p + "attn.w_qkv"] + params[p + "attn.b_qkv"]
        q, k, v = (
            qkv[..., i * d : (i + 1) * d].reshape(B, T, H, hd).transpose(0, 2, 1, 3)
            for i in range(3)
        )
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        scores = np.where(mask, scores, -1e30)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        o = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
        proj = o @ params[p + "attn.w_o"] + params[p + "attn.b_o"]
        x = x + proj

        a2, ln2c = _layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        hpre = a2 @ params[p + "mlp.w1"] + params[p + "mlp.b1"]
        hact, tanh_c = _gelu(hpre)
        m = hact @ params[p + "mlp.w2"] + params[p + "mlp.b2"]
        x = x + m
        caches.append((a, ln1c, q, k, v, attn, o, a2, ln2c, hpre, hact, tanh_c))

    f, lnfc = _layer_norm(x, params["lnf.g"], params["lnf.b"])
    logits = f @ params["head.w"] + params["head.b"]
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits in forward pass")
    return logits, (seqs, f, lnfc, caches)


def backward(params: dict, cfg: ModelConfig, dlogits: np.ndarray, cache, grads: dict):
    """Accumulate d(objective)/d(params) into `grads` given d(objective)/d(logits)."""
    seqs, f, lnfc, caches = cache
    B, T = seqs.shape
    d, H, hd = cfg.embed_dim, cfg.heads, cfg.head_dim
    scale = 1.0 / math.sqrt(hd)

    grads["head.w"] += np.einsum("btd,btv->dv", f, dlogits)
    grads["head.b"] += dlogits.sum(axis=(0, 1))
    df = dlogits @ params["head.w"].T
    dx, dg, db = _layer_norm_back(df, lnfc)
    grads["lnf.g"] += dg
    grads["lnf.b"] += db

    for layer in reversed(range(cfg.layers)):
        p = f"h{layer}."
        a, ln1c, q, k, v, attn, o, a2, ln2c, hpre, hact, tanh_c = caches[layer]

        dm = dx
        grads[p + "mlp.w2"] += np.einsum("bth,btd->hd", hact, dm)
        grads[p + "mlp.b2"] += dm.sum(axis=(0, 1))
        dhact = dm @ params[p + "mlp.w2"].T
        dhpre = _gelu_back(dhact, hpre, tanh_c)
        grads[p + "mlp.w1"] += np.einsum("btd,bth->dh", a2, dhpre)
        grads[p + "mlp.b1"] += dhpre.sum(axis=(0, 1))
        da2 = dhpre @ params[p + "mlp.w1"].T
        dx2, dg, db = _layer_norm_back(da2, ln2c)
        grads[p + "ln2.g"] += dg
        grads[p + "ln2.b"] += db
        dx = dx + dx2

        dproj = dx
        grads[p + "attn.w_o"] += np.einsum("btd,bte->de", o, dproj)
        grads[p + "attn.b_o"] += dproj.sum(axis=(0, 1))
        do = (dproj @ params[p + "attn.w_o"].T).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        dattn = do @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ do
        ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = (ds @ k) * scale
        dk = (ds.transpose(0, 1, 3, 2) @ q) * scale
        dqkv = np.concatenate(
            [t.transpose(0, 2, 1, 3).reshape(B, T, d) for t in (dq, dk, dv)], axis=-1
        )
        grads[p + "attn.w_qkv"] += np.einsum("btd,bte->de", a, dqkv)
        grads[p + "attn.b_qkv"] += dqkv.sum(axis=(0, 1))
        da = dqkv @ params[p + "attn.w_qkv"].T
        dx1, dg, db = _layer_norm_back(da, ln1c)
        grads[p + "ln1.g"] += dg
        grads[p + "ln1.b"] += db
        dx = dx + dx1

    grads["wpe"][0] += dx[:, 0, :].sum(axis=0)
    if T > 1:
        grads["wpe"][1:T] += dx[:, 1:, :].sum(axis=0)
        np.add.at(grads["wte"], seqs[:, :-1], dx[:, 1:, :])


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def window_splits(length: int, context_length: int) -> list:
    """Non-overlapping (start, end) windows covering a text of `length` tokens."""
    return [(s, min(s + context_length, length)) for s in range(0, length, context_length)]


def log_prob(model, text: np.ndarray) -> tuple:
    """Total log-likelihood of a token sequence in nats, plus the token count.

    Texts longer than the context are scored in non-overlapping windows, each
    re-conditioned on BOS, and summed; the total is additive over the splits.
    """
    cfg = model.config
    params = param_views(model.params, cfg)
    text = np.asarray(text)
    if text.ndim != 1:
        raise ContractError("log_prob scores a single 1-D token sequence")
    if text.size == 0:
        return 0.0, 0
    if int(text.max()) >= cfg.vocab:
        raise InputError(f"token {int(text.max())} outside vocabulary of {cfg.vocab}")
    total = 0.0
    for s, e in window_splits(len(text), cfg.context_length):
        window = text[s:e][None, :]
        logits, _ = forward(params, cfg, window)
        lsm = _log_softmax(logits[0])
        total += float(lsm[np.arange(e - s), text[s:e]].sum())
    return total, int(len(text))


def batch_mean_ll(model, batch) -> float:
    """Token-mean log-likelihood of a TokenBatch, no gradient."""
    cfg = model.config
    params = param_views(model.params, cfg)
    logits, _ = forward(params, cfg, batch.sequences)
    lsm = _log_softmax(logits)
    B, T = batch.sequences.shape
    picked = lsm[np.arange(B)[:, None], np.arange(T)[None, :], batch.sequences]
    return float(picked.mean())


def grad_log_prob(model, batch, step=None) -> tuple:
    """Ascent gradient of the token-mean log-likelihood over a batch.

    Returns (flat gradient of length P, mean_ll). NaNs in the forward pass
    raise a numerical error naming the step and domain when provided.
    """
    cfg = model.config
    params = param_views(model.params, cfg)
    seqs = batch.sequences
    B, T = seqs.shape
    try:
        logits, cache = forward(params, cfg, seqs)
    except NumericalError as err:
        raise NumericalError(
            f"{err} (step={step}, domain_index={batch.domain_index})"
        ) from err
    lsm = _log_softmax(logits)
    probs = np.exp(lsm)
    picked = lsm[np.arange(B)[:, None], np.arange(T)[None, :], seqs]
    mean_ll = float(picked.mean())

    dlogits = -probs
    np.add.at(dlogits, (np.arange(B)[:, None], np.arange(T)[None, :], seqs), 1.0)
    dlogits /= B * T

    flat_grads = np.zeros_like(model.params)
    grads = param_views(flat_grads, cfg)
    backward(params, cfg, dlogits, cache, grads)
    return flat_grads, mean_ll
