"""Deterministic RNG stream derivation.

Every random decision in mixalign is drawn from a named PCG64 stream derived
from (seed, *tags). Derivation goes through BLAKE2b, so streams for distinct
tags are independent and stable across platforms and Python versions.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np


def _encode(part) -> bytes:
    if isinstance(part, bool):
        return b"b" + (b"\x01" if part else b"\x00")
    if isinstance(part, int):
        return b"i" + part.to_bytes(16, "little", signed=True)
    if isinstance(part, str):
        raw = part.encode("utf-8")
        return b"s" + struct.pack("<I", len(raw)) + raw
    raise TypeError(f"cannot derive RNG stream from {type(part).__name__}")


def seed_sequence(*parts) -> np.random.SeedSequence:
    """SeedSequence keyed by a tuple of ints/strings."""
    h = hashlib.blake2b(digest_size=32)
    for part in parts:
        h.update(_encode(part))
    words = np.frombuffer(h.digest(), dtype="<u4")
    return np.random.SeedSequence([int(w) for w in words])


def stream(*parts) -> np.random.Generator:
    """A fresh Generator for the stream named by `parts`."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*parts)))


def generator_state(gen: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a PCG64 generator."""
    return gen.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen
