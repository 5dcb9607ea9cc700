"""Model checkpoints and their binary on-disk format.

Layout: magic `MXK1`, a length-prefixed JSON header (config, step, config
digest, optimizer-moment names, RNG snapshot), then raw little-endian f64
blocks for the parameter vector and each optimizer moment. Raw bytes are
preserved, so save/load round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import rngtools
from ..errors import ContractError, OverwriteError
from .model import ModelConfig, init_params

CHECKPOINT_MAGIC = b"MXK1"


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: np.ndarray
    step: int = 0
    opt_state: dict = field(default_factory=dict)
    rng_state: dict | None = None
    config_hash: str = ""

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.config.param_count,):
            raise ContractError(
                f"params length {self.params.shape} != P={self.config.param_count}"
            )
        if not np.all(np.isfinite(self.params)):
            raise ContractError("checkpoint params contain NaN or Inf")
        if self.step < 0:
            raise ContractError(f"step must be >= 0, got {self.step}")
        if not self.config_hash:
            self.config_hash = self.config.digest()
        elif self.config_hash != self.config.digest():
            raise ContractError("config_hash does not match the config serialization")

    def replace(self, **kw) -> "ModelCheckpoint":
        out = {
            "config": self.config,
            "params": self.params,
            "step": self.step,
            "opt_state": self.opt_state,
            "rng_state": self.rng_state,
        }
        out.update(kw)
        return ModelCheckpoint(**out)


def init_model(config: ModelConfig, seed: int) -> ModelCheckpoint:
    """Fresh step-0 checkpoint; parameters are a pure function of (config, seed)."""
    gen = rngtools.stream(seed, "init-model", config.digest())
    return ModelCheckpoint(config=config, params=init_params(config, gen))


def save_checkpoint(path, ckpt: ModelCheckpoint, force: bool = False) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise OverwriteError(f"{path} exists; pass force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    moment_names = sorted(k for k in ckpt.opt_state if isinstance(ckpt.opt_state[k], np.ndarray))
    scalars = {k: v for k, v in ckpt.opt_state.items() if not isinstance(v, np.ndarray)}
    header = json.dumps(
        {
            "config": ckpt.config.to_json(),
            "step": ckpt.step,
            "config_hash": ckpt.config_hash,
            "moments": moment_names,
            "opt_scalars": scalars,
            "rng_state": ckpt.rng_state,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", len(ckpt.params)))
        fh.write(np.ascontiguousarray(ckpt.params, dtype="<f8").tobytes())
        for name in moment_names:
            blob = np.ascontiguousarray(ckpt.opt_state[name], dtype="<f8")
            fh.write(struct.pack("<Q", blob.size))
            fh.write(blob.tobytes())
    return path


def load_checkpoint(path) -> ModelCheckpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen])
    pos = 8 + hlen
    (plen,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    params = np.frombuffer(raw[pos : pos + 8 * plen], dtype="<f8").copy()
    if params.size != plen:
        raise ContractError(f"{path}: truncated parameter block")
    pos += 8 * plen
    opt_state = dict(header["opt_scalars"])
    for name in header["moments"]:
        (mlen,) = struct.unpack("<Q", raw[pos : pos + 8])
        pos += 8
        opt_state[name] = np.frombuffer(raw[pos : pos + 8 * mlen], dtype="<f8").copy()
        pos += 8 * mlen
    return ModelCheckpoint(
        config=ModelConfig.from_json(header["config"]),
        params=params,
        step=header["step"],
        opt_state=opt_state,
        rng_state=header["rng_state"],
        config_hash=header["config_hash"],
    )
