"""Log-likelihood-space geometry.

Models are compared through their text-level log-likelihood vectors: the
model-by-text matrix is double-centered (per-model and per-text offsets
removed), squared distances between centered rows estimate KL divergences,
and PCA of the centered rows gives 2-D model maps. All distances are only
comparable inside one centering, so the centered matrix records the digest
of its source.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

NATS_PER_TEXT = "nats_per_text"
BITS_PER_BYTE = "bits_per_byte"
KL_UNITS = (NATS_PER_TEXT, BITS_PER_BYTE)

LL_TABLE_HEADER = ["model_id", "text_id", "domain", "total_ll_nats", "token_count", "byte_count"]


@dataclass
class DomainLLVector:
    """Per-domain mean log-likelihood of one model on the evaluation corpus."""

    values: np.ndarray
    normalized: bool
    K: int
    source_model: str = ""
    eval_digest: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.K,):
            raise ContractError(f"expected {self.K} domain values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("domain LL vector contains NaN or Inf")


@dataclass
class TextLLMatrix:
    """Model-by-text total log-likelihoods in nats, with optional text metadata."""

    rows: list  # model ids
    cols: list  # text ids
    L: np.ndarray
    col_domains: list | None = None
    col_token_counts: list | None = None
    col_byte_counts: list | None = None

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=np.float64)
        if self.L.shape != (len(self.rows), len(self.cols)):
            raise ContractError(f"L shape {self.L.shape} != ({len(self.rows)}, {len(self.cols)})")
        if len(set(self.rows)) != len(self.rows):
            raise ContractError("duplicate model ids")
        if len(set(self.cols)) != len(self.cols):
            raise ContractError("duplicate text ids")
        if not np.all(np.isfinite(self.L)):
            raise ContractError("LL matrix contains NaN or Inf")
        for meta in (self.col_domains, self.col_token_counts, self.col_byte_counts):
            if meta is not None and len(meta) != len(self.cols):
                raise ContractError("column metadata length mismatch")

    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for r in self.rows:
            h.update(r.encode() + b"\x00")
        for c in self.cols:
            h.update(c.encode() + b"\x01")
        h.update(np.ascontiguousarray(self.L, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class CenteredMatrix:
    """Double-centered LL matrix; rows are the q_i coordinates."""

    Q: np.ndarray
    rows: list
    cols: list
    provenance: str

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=np.float64)
        scale = max(float(np.abs(self.Q).max(initial=0.0)), 1.0)
        tol = 1e-9 * self.Q.shape[0] * self.Q.shape[1] * scale
        if np.abs(self.Q.sum(axis=1)).max(initial=0.0) > tol:
            raise ContractError("centered rows do not sum to zero")
        if np.abs(self.Q.sum(axis=0)).max(initial=0.0) > tol:
            raise ContractError("centered columns do not sum to zero")

    def row(self, model_id: str) -> np.ndarray:
        try:
            return self.Q[self.rows.index(model_id)]
        except ValueError:
            raise ContractError(f"unknown model id {model_id!r}") from None


@dataclass
class Trajectory:
    """Ordered per-checkpoint LL measurements of one training run."""

    run_id: str
    checkpoints: list = field(default_factory=list)  # (step, DomainLLVector, text_ll_row|None)

    def append(self, step: int, domain_ll: DomainLLVector, text_ll_row: np.ndarray | None = None):
        if self.checkpoints and step <= self.checkpoints[-1][0]:
            raise ContractError(
                f"trajectory steps must increase: {step} after {self.checkpoints[-1][0]}"
            )
        self.checkpoints.append((step, domain_ll, text_ll_row))

    @property
    def steps(self) -> list:
        return [s for s, _, _ in self.checkpoints]


def domain_ll_vector(model_scores, eval_corpus, normalize: bool, source_model: str = "") -> DomainLLVector:
    """Aggregate per-text (total_ll, token_count) scores into per-domain means.

    normalize=True divides each domain's total log-likelihood by its total
    token count (a token-level mean, invariant to re-chunking the stream);
    normalize=False is the plain per-text mean.
    """
    total_ll = np.zeros(eval_corpus.K)
    total_tokens = np.zeros(eval_corpus.K)
    counts = np.zeros(eval_corpus.K)
    for text in eval_corpus.texts:
        if text.text_id not in model_scores:
            raise ContractError(f"missing score for eval text {text.text_id!r}")
        ll, tokens = model_scores[text.text_id]
        total_ll[text.domain_index] += ll
        total_tokens[text.domain_index] += tokens
        counts[text.domain_index] += 1
    values = total_ll / total_tokens if normalize else total_ll / counts
    return DomainLLVector(
        values=values,
        normalized=normalize,
        K=eval_corpus.K,
        source_model=source_model,
        eval_digest=eval_corpus.digest(),
    )


def double_center(matrix: TextLLMatrix) -> CenteredMatrix:
    """Q_ij = L_ij - rowmean_i - colmean_j + grandmean; kills per-model and
    per-text offsets and is idempotent."""
    L = matrix.L
    if L.shape[0] < 2 or L.shape[1] < 2:
        raise ContractError(f"double centering needs M >= 2 and N >= 2, got {L.shape}")
    row_means = L.mean(axis=1, keepdims=True)
    col_means = L.mean(axis=0, keepdims=True)
    Q = L - row_means - col_means + L.mean()
    return CenteredMatrix(Q=Q, rows=list(matrix.rows), cols=list(matrix.cols), provenance=matrix.digest())


def kl_estimate(centered: CenteredMatrix, i: str, j: str, eval_corpus=None, units: str = NATS_PER_TEXT) -> float:
    """Squared distance between centered rows scaled to a KL estimate.

    nats_per_text: ||q_i - q_j||^2 / (2N). bits_per_byte additionally divides
    by the mean text byte length and converts nats to bits.
    """
    if units not in KL_UNITS:
        raise ContractError(f"unknown units {units!r}, expected one of {KL_UNITS}")
    qi = centered.row(i)
    qj = centered.row(j)
    n_texts = centered.Q.shape[1]
    value = float(((qi - qj) ** 2).sum()) / (2.0 * n_texts)
    if units == BITS_PER_BYTE:
        if eval_corpus is None:
            raise ContractError("bits_per_byte units need the evaluation corpus")
        if eval_corpus.N != n_texts:
            raise ContractError(
                f"centered matrix has {n_texts} texts, eval corpus has {eval_corpus.N}"
            )
        value = value / eval_corpus.mean_byte_length * np.log2(np.e)
    return float(value)


@dataclass
class ProjectedMap:
    """2-D PCA coordinates of centered model rows."""

    coords: np.ndarray  # (M, 2)
    rows: list
    explained: np.ndarray  # singular values of Q/sqrt(N)
    degraded: bool  # rank < 2: second axis zeroed


def pca_project(centered: CenteredMatrix, dims: int = 2) -> ProjectedMap:
    """Top-2 principal coordinates of the rows of Q/sqrt(N).

    Columns of Q sum to zero, so the point cloud is already centered and the
    SVD is the exact PCA. Per-axis sign is fixed by making each axis's
    largest-magnitude loading positive. Rank-1 inputs degrade to 1-D with the
    flag set and a zeroed second axis.
    """
    if dims != 2:
        raise ContractError("only 2-D projection is supported")
    M, N = centered.Q.shape
    if M < 3:
        raise ContractError(f"projection needs at least 3 models, got {M}")
    X = centered.Q / np.sqrt(N)
    U, S, Vt = np.linalg.svd(X, full_matrices=False)
    coords = np.zeros((M, 2))
    degraded = bool(S[1] <= 1e-12 * max(S[0], 1e-300))
    axes = 1 if degraded else 2
    for a in range(axes):
        load = Vt[a]
        sign = -1.0 if load[np.abs(load).argmax()] < 0 else 1.0
        coords[:, a] = sign * U[:, a] * S[a]
    return ProjectedMap(coords=coords, rows=list(centered.rows), explained=S[:2].copy(), degraded=degraded)


def trajectories_to_matrix(trajectories: list, text_ids: list, **col_meta) -> TextLLMatrix:
    """Stack recorded per-checkpoint text-LL rows as model rows `run_id@step`."""
    rows = []
    data = []
    for traj in trajectories:
        for step, _, text_row in traj.checkpoints:
            if text_row is None:
                raise ContractError(
                    f"trajectory {traj.run_id!r} lacks a text-LL row at step {step}"
                )
            if len(text_row) != len(text_ids):
                raise ContractError(
                    f"text-LL row of {traj.run_id!r}@{step} has {len(text_row)} entries, "
                    f"expected {len(text_ids)}"
                )
            rows.append(f"{traj.run_id}@{step}")
            data.append(np.asarray(text_row, dtype=np.float64))
    return TextLLMatrix(rows=rows, cols=list(text_ids), L=np.stack(data), **col_meta)


def trajectory_separation(traj_a1, traj_a2, traj_b1, traj_b2, text_ids: list) -> tuple:
    """Mean same-mixture vs cross-mixture q-distances at matched steps.

    A1/A2 are resamples of one mixture, B1/B2 of another. All four
    trajectories enter one joint centering; distances are matched per step.
    Returns (intra, inter).
    """
    trajs = [traj_a1, traj_a2, traj_b1, traj_b2]
    steps = trajs[0].steps
    for t in trajs[1:]:
        if t.steps != steps:
            raise ContractError(
                f"trajectories {trajs[0].run_id!r} and {t.run_id!r} have mismatched steps"
            )
    if not steps:
        raise ContractError("empty trajectories")
    centered = double_center(trajectories_to_matrix(trajs, text_ids))

    def dist(t1, t2, step):
        return float(
            np.linalg.norm(centered.row(f"{t1.run_id}@{step}") - centered.row(f"{t2.run_id}@{step}"))
        )

    intra = []
    inter = []
    for s in steps:
        intra.append(dist(traj_a1, traj_a2, s))
        intra.append(dist(traj_b1, traj_b2, s))
        inter.append(dist(traj_a1, traj_b1, s))
        inter.append(dist(traj_a1, traj_b2, s))
        inter.append(dist(traj_a2, traj_b1, s))
        inter.append(dist(traj_a2, traj_b2, s))
    return float(np.mean(intra)), float(np.mean(inter))


# ---------------------------------------------------------------------------
# CSV bridge for LL tables (also the import path for external model scores)


def write_ll_table(path, matrix: TextLLMatrix) -> Path:
    """One CSV row per (model, text); floats use shortest round-trip repr."""
    if matrix.col_domains is None or matrix.col_token_counts is None or matrix.col_byte_counts is None:
        raise ContractError("LL table export needs domain/token/byte column metadata")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LL_TABLE_HEADER)
        for r, model_id in enumerate(matrix.rows):
            for c, text_id in enumerate(matrix.cols):
                writer.writerow(
                    [
                        model_id,
                        text_id,
                        matrix.col_domains[c],
                        repr(float(matrix.L[r, c])),
                        matrix.col_token_counts[c],
                        matrix.col_byte_counts[c],
                    ]
                )
    return path


def read_ll_table(path) -> TextLLMatrix:
    """Rebuild a TextLLMatrix from the CSV bridge; models and texts keep file order."""
    rows = []
    cols = []
    domains = {}
    tokens = {}
    bytes_ = {}
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != LL_TABLE_HEADER:
            raise ContractError(f"unexpected LL table header {header}")
        for model_id, text_id, domain, ll, tok, byt in reader:
            if model_id not in rows:
                rows.append(model_id)
            if text_id not in cols:
                cols.append(text_id)
            domains[text_id] = domain
            tokens[text_id] = int(tok)
            bytes_[text_id] = int(byt)
            cells[(model_id, text_id)] = float(ll)
    L = np.empty((len(rows), len(cols)))
    for r, model_id in enumerate(rows):
        for c, text_id in enumerate(cols):
            if (model_id, text_id) not in cells:
                raise ContractError(f"LL table missing cell ({model_id!r}, {text_id!r})")
            L[r, c] = cells[(model_id, text_id)]
    return TextLLMatrix(
        rows=rows,
        cols=cols,
        L=L,
        col_domains=[domains[c] for c in cols],
        col_token_counts=[tokens[c] for c in cols],
        col_byte_counts=[bytes_[c] for c in cols],
    )


def matrix_domain_ll(matrix: TextLLMatrix, model_id: str, eval_corpus, normalize: bool) -> DomainLLVector:
    """Domain LL vector for one matrix row, matched to the eval corpus by text id."""
    if normalize and matrix.col_token_counts is None:
        raise ContractError("normalized domain LL needs token counts in the matrix")
    if model_id not in matrix.rows:
        raise ContractError(f"unknown model id {model_id!r}")
    r = matrix.rows.index(model_id)
    counts = matrix.col_token_counts or [0] * len(matrix.cols)
    scores = {
        text_id: (matrix.L[r, c], counts[c]) for c, text_id in enumerate(matrix.cols)
    }
    return domain_ll_vector(scores, eval_corpus, normalize, source_model=model_id)
