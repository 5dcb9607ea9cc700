"""Synthetic multi-domain byte corpora.

Domains are seeded Markov chains over byte tokens (vocabulary 0..255). Each
domain reserves a suffix of its generated stream as held-out material; the
evaluation corpus is chunked out of that suffix, so evaluation texts are never
emitted as training windows.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rngtools
from .errors import ConfigError, ContractError, NumericalError, OverwriteError

CORPUS_MAGIC = b"MXC1"
MAX_CONTEXTS = 1 << 16  # transition-table rows kept in memory
DEFAULT_HELDOUT_FRACTION = 0.1
_BURN_IN = 256


@dataclass(frozen=True)
class DomainSpec:
    """Seeded Markov-chain description of one text domain.

    `skew` is the symmetric Dirichlet concentration of the sampled transition
    rows: small values concentrate each row on a few tokens, large values
    flatten rows toward uniform. skew=inf is a degenerate sentinel placing all
    of each row's mass on one seeded token.
    """

    name: str
    order: int
    transition_seed: int
    alphabet_size: int = 256
    skew: float = 1.0

    def __post_init__(self):
        if not self.name:
            raise ConfigError("domain name must be nonempty")
        if self.order < 0:
            raise ConfigError(f"order must be >= 0, got {self.order}")
        if not 2 <= self.alphabet_size <= 256:
            raise ConfigError(f"alphabet_size must be in [2, 256], got {self.alphabet_size}")
        if not self.skew > 0:
            raise ConfigError(f"skew must be positive, got {self.skew}")
        if self.alphabet_size**self.order > MAX_CONTEXTS:
            raise ConfigError(
                f"alphabet_size**order = {self.alphabet_size**self.order} exceeds "
                f"the supported maximum of {MAX_CONTEXTS} transition contexts"
            )

    def transition_matrix(self) -> np.ndarray:
        """Materialize the (contexts x alphabet) transition rows for this spec."""
        contexts = self.alphabet_size**self.order
        gen = rngtools.stream(self.transition_seed, "transitions", self.order, self.alphabet_size)
        if math.isinf(self.skew):
            hot = gen.integers(self.alphabet_size, size=contexts)
            rows = np.zeros((contexts, self.alphabet_size))
            rows[np.arange(contexts), hot] = 1.0
            return rows
        rows = gen.gamma(self.skew, size=(contexts, self.alphabet_size))
        sums = rows.sum(axis=1)
        if not np.all(sums > 0):
            raise NumericalError(
                f"skew={self.skew} underflows transition sampling; use skew=inf for one-hot rows"
            )
        return rows / sums[:, None]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "order": self.order,
            "transition_seed": self.transition_seed,
            "alphabet_size": self.alphabet_size,
            "skew": "inf" if math.isinf(self.skew) else self.skew,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DomainSpec":
        skew = obj["skew"]
        return cls(
            name=obj["name"],
            order=int(obj["order"]),
            transition_seed=int(obj["transition_seed"]),
            alphabet_size=int(obj["alphabet_size"]),
            skew=math.inf if skew == "inf" else float(skew),
        )


@dataclass
class DomainCorpus:
    """One domain's token stream with a train/held-out split point."""

    spec: DomainSpec
    tokens: np.ndarray  # uint8, full stream (train prefix + held-out suffix)
    train_end: int
    rng_seed: int = 0

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.uint8)
        if self.train_end < 1 or self.train_end > len(self.tokens):
            raise ContractError(f"train_end {self.train_end} outside stream of {len(self.tokens)}")
        if len(self.tokens) and int(self.tokens.max()) >= self.spec.alphabet_size:
            raise ContractError("token outside the domain alphabet")

    @property
    def train_tokens(self) -> np.ndarray:
        return self.tokens[: self.train_end]

    @property
    def heldout_tokens(self) -> np.ndarray:
        return self.tokens[self.train_end :]

    @property
    def byte_count(self) -> int:
        return len(self.tokens)


@dataclass
class EvalText:
    domain_index: int
    domain: str
    tokens: np.ndarray
    byte_length: int
    offset: int  # position inside the source domain stream
    text_id: str


@dataclass
class EvalCorpus:
    """Fixed evaluation corpus partitioned by domain."""

    texts: list
    K: int
    labels: tuple
    chunk_bytes: int

    def __post_init__(self):
        if self.K < 1 or len(self.labels) != self.K:
            raise ContractError("label count must equal K")
        for t in self.texts:
            if not 0 <= t.domain_index < self.K:
                raise ContractError(f"domain index {t.domain_index} outside [0, {self.K})")
            if t.byte_length != len(t.tokens):
                raise ContractError(f"byte_length mismatch for text {t.text_id}")
        counts = self.per_domain_counts
        if any(c < 1 for c in counts):
            raise ContractError(f"every domain needs at least one eval text, got {counts}")

    @property
    def N(self) -> int:
        return len(self.texts)

    @property
    def per_domain_counts(self) -> list:
        counts = [0] * self.K
        for t in self.texts:
            counts[t.domain_index] += 1
        return counts

    @property
    def per_domain_mean_tokens(self) -> list:
        sums = [0] * self.K
        for t in self.texts:
            sums[t.domain_index] += len(t.tokens)
        return [s / c for s, c in zip(sums, self.per_domain_counts)]

    @property
    def mean_byte_length(self) -> float:
        return sum(t.byte_length for t in self.texts) / len(self.texts)

    @property
    def text_ids(self) -> list:
        return [t.text_id for t in self.texts]

    def digest(self) -> str:
        cached = getattr(self, "_digest", None)
        if cached is None:
            h = hashlib.blake2b(digest_size=16)
            h.update(struct.pack("<I", self.K))
            for name in self.labels:
                h.update(name.encode("utf-8") + b"\x00")
            for t in self.texts:
                h.update(struct.pack("<IQ", t.domain_index, t.offset))
                h.update(t.tokens.tobytes())
            cached = h.hexdigest()
            self._digest = cached
        return cached


@dataclass
class TokenBatch:
    """Fixed-length training windows drawn from a single domain."""

    domain_index: int
    sequences: np.ndarray  # (windows, window_length) uint8
    total_tokens: int = field(init=False)

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.uint8)
        if self.sequences.ndim != 2:
            raise ContractError("sequences must be a 2-D window array")
        self.total_tokens = int(self.sequences.shape[0] * self.sequences.shape[1])


def _sample_chain(spec: DomainSpec, total: int, gen: np.random.Generator) -> np.ndarray:
    rows = spec.transition_matrix()
    if spec.order == 0:
        cum = np.cumsum(rows[0])
        cum[-1] = 1.0
        idx = np.searchsorted(cum, gen.random(total), side="right")
        return np.minimum(idx, spec.alphabet_size - 1).astype(np.uint8)

    cums = np.cumsum(rows, axis=1)
    cums[:, -1] = 1.0
    cum_lists = cums.tolist()
    n = total + _BURN_IN
    u = gen.random(n).tolist()
    out = np.empty(n, dtype=np.uint8)
    top = spec.alphabet_size - 1
    mod = spec.alphabet_size ** (spec.order - 1)
    alphabet = spec.alphabet_size
    state = 0
    for i in range(n):
        t = bisect_right(cum_lists[state], u[i])
        if t > top:
            t = top
        out[i] = t
        state = (state % mod) * alphabet + t
    return out[_BURN_IN:]


def generate_domain(
    spec: DomainSpec,
    train_bytes: int,
    rng_seed: int,
    heldout_fraction: float = DEFAULT_HELDOUT_FRACTION,
    min_train_bytes: int = 1,
) -> DomainCorpus:
    """Generate one domain stream; `train_bytes` become the training prefix.

    The stream is extended so that a `heldout_fraction` suffix remains after
    the training prefix; evaluation texts are carved from that suffix only.
    Deterministic in (spec, rng_seed).
    """
    if train_bytes < max(min_train_bytes, 1):
        raise ConfigError(
            f"train_bytes={train_bytes} too small; minimum is {max(min_train_bytes, 1)}"
        )
    if not 0 <= heldout_fraction < 1:
        raise ConfigError(f"heldout_fraction must be in [0, 1), got {heldout_fraction}")
    total = int(math.ceil(train_bytes / (1.0 - heldout_fraction))) if heldout_fraction else train_bytes
    gen = rngtools.stream(rng_seed, "generate", spec.transition_seed, spec.name)
    tokens = _sample_chain(spec, total, gen)
    return DomainCorpus(spec=spec, tokens=tokens, train_end=train_bytes, rng_seed=rng_seed)


def build_eval_corpus(
    domains: list,
    texts_per_domain: int,
    chunk_bytes: int,
    rng_seed: int,
    variable_chunk: tuple | None = None,
) -> EvalCorpus:
    """Carve the per-domain evaluation texts out of the held-out suffixes.

    Fixed mode slices the held-out region into `chunk_bytes` slots and samples
    `texts_per_domain` of them without replacement; a trailing partial chunk is
    discarded. `variable_chunk=(lo, hi)` instead carves consecutive texts with
    per-text lengths drawn uniformly from [lo, hi].
    """
    if texts_per_domain < 1:
        raise ConfigError("texts_per_domain must be >= 1")
    if chunk_bytes < 1:
        raise ConfigError("chunk_bytes must be >= 1")
    if variable_chunk is not None:
        lo, hi = variable_chunk
        if not 1 <= lo <= hi:
            raise ConfigError(f"variable_chunk bounds must satisfy 1 <= lo <= hi, got {variable_chunk}")

    texts = []
    labels = tuple(d.spec.name for d in domains)
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate domain names in {labels}")
    for k, dom in enumerate(domains):
        held = dom.heldout_tokens
        gen = rngtools.stream(rng_seed, "eval", k, dom.spec.name)
        if variable_chunk is None:
            slots = len(held) // chunk_bytes
            if slots < texts_per_domain:
                shortfall = texts_per_domain * chunk_bytes - slots * chunk_bytes
                raise ConfigError(
                    f"domain {dom.spec.name!r}: held-out region supports {slots} eval texts "
                    f"of {chunk_bytes} bytes, need {texts_per_domain} "
                    f"(short by {shortfall} bytes)"
                )
            chosen = np.sort(gen.choice(slots, size=texts_per_domain, replace=False))
            for j, slot in enumerate(chosen):
                start = int(slot) * chunk_bytes
                toks = held[start : start + chunk_bytes].copy()
                texts.append(
                    EvalText(
                        domain_index=k,
                        domain=dom.spec.name,
                        tokens=toks,
                        byte_length=chunk_bytes,
                        offset=dom.train_end + start,
                        text_id=f"{dom.spec.name}/{j:04d}",
                    )
                )
        else:
            lo, hi = variable_chunk
            pos = 0
            made = 0
            while made < texts_per_domain and pos + lo <= len(held):
                length = int(gen.integers(lo, hi + 1))
                if pos + length > len(held):
                    break
                toks = held[pos : pos + length].copy()
                texts.append(
                    EvalText(
                        domain_index=k,
                        domain=dom.spec.name,
                        tokens=toks,
                        byte_length=length,
                        offset=dom.train_end + pos,
                        text_id=f"{dom.spec.name}/{made:04d}",
                    )
                )
                pos += length
                made += 1
            if made < texts_per_domain:
                raise ConfigError(
                    f"domain {dom.spec.name!r}: held-out region exhausted after {made} "
                    f"variable-length eval texts, need {texts_per_domain} "
                    f"(short by ~{(texts_per_domain - made) * hi} bytes)"
                )
    return EvalCorpus(texts=texts, K=len(domains), labels=labels, chunk_bytes=chunk_bytes)


def sample_domain(weights, rng: np.random.Generator) -> int:
    """Draw a domain index according to the weight vector; one uniform draw."""
    values = np.asarray(getattr(weights, "values", weights), dtype=np.float64)
    cum = np.cumsum(values)
    cum[-1] = 1.0
    return int(min(np.searchsorted(cum, rng.random(), side="right"), len(values) - 1))


def sample_batch(
    corpus: DomainCorpus,
    window_length: int,
    windows: int,
    rng: np.random.Generator,
    domain_index: int = 0,
) -> TokenBatch:
    """Uniformly positioned contiguous training windows from one domain."""
    max_start = corpus.train_end - window_length
    if max_start < 0:
        raise ContractError(
            f"window_length {window_length} exceeds training region of {corpus.train_end} tokens"
        )
    starts = rng.integers(0, max_start + 1, size=windows)
    seqs = np.empty((windows, window_length), dtype=np.uint8)
    train = corpus.train_tokens
    for i, s in enumerate(starts):
        seqs[i] = train[s : s + window_length]
    return TokenBatch(domain_index=domain_index, sequences=seqs)


# ---------------------------------------------------------------------------
# on-disk formats: one MXC1 binary per domain plus JSON manifests


def _corpus_path(out_dir: Path, name: str) -> Path:
    return out_dir / f"{name}.mxc"


def write_corpus_dir(
    out_dir,
    corpora: list,
    config_digest: str = "",
    seeds: dict | None = None,
    force: bool = False,
) -> Path:
    """Write per-domain MXC1 binaries and the corpus manifest; returns manifest path."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists() and not force:
        raise OverwriteError(f"{manifest_path} exists; pass force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for dom in corpora:
        path = _corpus_path(out_dir, dom.spec.name)
        with open(path, "wb") as fh:
            fh.write(CORPUS_MAGIC)
            fh.write(struct.pack("<IQ", dom.spec.alphabet_size, len(dom.tokens)))
            fh.write(dom.tokens.tobytes())
        entries.append(
            {
                "name": dom.spec.name,
                "spec": dom.spec.to_json(),
                "rng_seed": dom.rng_seed,
                "byte_count": dom.byte_count,
                "train_end": dom.train_end,
                "file": path.name,
            }
        )
    manifest = {
        "format": "mixalign-corpus/1",
        "config_digest": config_digest,
        "seeds": seeds or {},
        "domains": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def read_corpus_dir(in_dir) -> list:
    """Load every domain listed in the corpus manifest."""
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / "manifest.json").read_text())
    corpora = []
    for entry in manifest["domains"]:
        spec = DomainSpec.from_json(entry["spec"])
        raw = (in_dir / entry["file"]).read_bytes()
        if raw[:4] != CORPUS_MAGIC:
            raise ContractError(f"{entry['file']}: bad magic {raw[:4]!r}")
        alphabet, count = struct.unpack("<IQ", raw[4:16])
        if alphabet != spec.alphabet_size:
            raise ContractError(f"{entry['file']}: alphabet mismatch with manifest")
        tokens = np.frombuffer(raw[16 : 16 + count], dtype=np.uint8)
        if len(tokens) != count:
            raise ContractError(f"{entry['file']}: truncated token payload")
        corpora.append(
            DomainCorpus(
                spec=spec,
                tokens=tokens.copy(),
                train_end=entry["train_end"],
                rng_seed=entry["rng_seed"],
            )
        )
    return corpora


def write_eval_manifest(out_dir, eval_corpus: EvalCorpus, force: bool = False) -> Path:
    out_dir = Path(out_dir)
    path = out_dir / "eval.json"
    if path.exists() and not force:
        raise OverwriteError(f"{path} exists; pass force to overwrite")
    payload = {
        "format": "mixalign-eval/1",
        "K": eval_corpus.K,
        "labels": list(eval_corpus.labels),
        "chunk_bytes": eval_corpus.chunk_bytes,
        "digest": eval_corpus.digest(),
        "texts": [
            {
                "domain": t.domain,
                "domain_index": t.domain_index,
                "offset": t.offset,
                "byte_length": t.byte_length,
                "text_id": t.text_id,
            }
            for t in eval_corpus.texts
        ],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_eval_corpus(in_dir, corpora: list) -> EvalCorpus:
    """Rebuild the evaluation corpus from eval.json plus the domain binaries."""
    in_dir = Path(in_dir)
    payload = json.loads((in_dir / "eval.json").read_text())
    by_name = {dom.spec.name: dom for dom in corpora}
    texts = []
    for t in payload["texts"]:
        dom = by_name.get(t["domain"])
        if dom is None:
            raise ContractError(f"eval manifest references unknown domain {t['domain']!r}")
        toks = dom.tokens[t["offset"] : t["offset"] + t["byte_length"]].copy()
        if len(toks) != t["byte_length"]:
            raise ContractError(f"eval text {t['text_id']} extends past its domain stream")
        texts.append(
            EvalText(
                domain_index=t["domain_index"],
                domain=t["domain"],
                tokens=toks,
                byte_length=t["byte_length"],
                offset=t["offset"],
                text_id=t["text_id"],
            )
        )
    ec = EvalCorpus(
        texts=texts,
        K=payload["K"],
        labels=tuple(payload["labels"]),
        chunk_bytes=payload["chunk_bytes"],
    )
    if payload.get("digest") and ec.digest() != payload["digest"]:
        raise ContractError("eval corpus digest mismatch; corpus files changed after eval build")
    return ec
