"""Domain-weight estimation rules and their oracles.

The target direction is the per-domain log-likelihood difference between
target and base. The raw rule softmaxes it at temperature tau; the adjusted
rule first solves against the Gram matrix of per-domain LL gradients. Both
are instances of one entropy-regularized simplex problem whose closed form
is pi_k proportional to prior_k * exp(tilde_k / tau), equivalently a single
mirror-descent step under the negative-entropy mirror map. Weight vectors
estimated at several training steps are combined by the geometric mean,
the minimizer of the summed KL divergences to the trajectory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tinylm
from .errors import ContractError, MethodPreconditionError, NumericalError, OverwriteError

SIMPLEX_TOL = 1e-9
DEFAULT_TAU = 1.0
MAX_CONDITION = 1e12
WEIGHT_METHODS = ("raw", "adjusted", "aggregated", "uniform")


@dataclass
class DomainWeights:
    """A point on the K-domain probability simplex."""

    values: np.ndarray
    labels: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = tuple(self.labels)
        if self.values.shape != (len(self.labels),):
            raise ContractError(f"{len(self.labels)} labels for {self.values.shape} values")
        if len(set(self.labels)) != len(self.labels):
            raise ContractError(f"duplicate domain labels {self.labels}")
        if np.any(self.values < 0):
            raise ContractError(f"negative weight in {self.values}")
        if abs(float(self.values.sum()) - 1.0) > SIMPLEX_TOL:
            raise ContractError(f"weights sum to {self.values.sum()}, not 1")

    @property
    def K(self) -> int:
        return len(self.labels)


def uniform_weights(labels) -> DomainWeights:
    k = len(labels)
    return DomainWeights(values=np.full(k, 1.0 / k), labels=labels)


@dataclass
class TildeWeights:
    """Unconstrained pre-softmax weight vector."""

    values: np.ndarray
    ridge_used: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ContractError("tilde weights contain NaN or Inf")


@dataclass
class DomainJacobianGram:
    """JtJ where column k of J is the gradient of domain k's mean LL."""

    gram: np.ndarray
    ridge_used: float = 0.0
    model_step: int = 0
    normalized: bool = True

    def __post_init__(self):
        self.gram = np.asarray(self.gram, dtype=np.float64)
        K = self.gram.shape[0]
        if self.gram.shape != (K, K):
            raise ContractError(f"gram must be square, got {self.gram.shape}")
        scale = max(float(np.abs(self.gram).max()), 1e-300)
        if float(np.abs(self.gram - self.gram.T).max()) > 1e-9 * scale:
            raise ContractError("gram matrix is not symmetric")
        if self.ridge_used < 0:
            raise ContractError("ridge must be nonnegative")
        eigmin = float(np.linalg.eigvalsh(self.gram + self.ridge_used * np.eye(K)).min())
        if eigmin <= -1e-9 * max(float(np.trace(self.gram)), 1e-300):
            raise ContractError(f"gram + ridge*I has eigenvalue {eigmin} < 0")

    @property
    def K(self) -> int:
        return self.gram.shape[0]


@dataclass
class WeightTrajectory:
    """Weight vectors estimated along one training run, ordered by step."""

    entries: list = field(default_factory=list)  # (step, DomainWeights)

    def append(self, step: int, weights: DomainWeights):
        if self.entries:
            if step <= self.entries[-1][0]:
                raise ContractError(
                    f"trajectory steps must increase: {step} after {self.entries[-1][0]}"
                )
            if weights.labels != self.entries[-1][1].labels:
                raise ContractError("trajectory mixes label sets")
        self.entries.append((step, weights))

    @property
    def steps(self) -> list:
        return [s for s, _ in self.entries]

    @property
    def labels(self) -> tuple:
        if not self.entries:
            raise ContractError("empty weight trajectory")
        return self.entries[0][1].labels

    def stacked(self) -> np.ndarray:
        return np.stack([w.values for _, w in self.entries])


def lld(ell_tgt, ell) -> TildeWeights:
    """Target direction: componentwise ell_tgt - ell.

    Both vectors must come from the same eval corpus with the same
    normalization, otherwise the difference compares incomparable scales.
    """
    if ell_tgt.K != ell.K:
        raise ContractError(f"K mismatch: {ell_tgt.K} vs {ell.K}")
    if ell_tgt.normalized != ell.normalized:
        raise ContractError("normalization flags differ between LL vectors")
    if ell_tgt.eval_digest and ell.eval_digest and ell_tgt.eval_digest != ell.eval_digest:
        raise ContractError("LL vectors were measured on different eval corpora")
    return TildeWeights(values=ell_tgt.values - ell.values)


def lld_spread(diff) -> float:
    """Range (max - min) of an LLD vector; the natural temperature scale.

    softmax(diff/tau) at tau near the spread keeps weight ratios O(e), away
    from both the uniform and the one-hot regimes. Shifting diff by a
    constant does not move the softmax, so the range is the right scale, not
    the magnitude.
    """
    values = np.asarray(getattr(diff, "values", diff), dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ContractError("LLD difference contains NaN or Inf")
    if values.size < 2:
        raise ContractError("spread needs at least two domains")
    return float(values.max() - values.min())


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def raw_lld_weights(diff, tau: float, labels=None) -> DomainWeights:
    """softmax(diff / tau); the tau=inf sentinel returns exact uniform weights."""
    values = np.asarray(getattr(diff, "values", diff), dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ContractError("LLD difference contains NaN or Inf")
    if labels is None:
        labels = tuple(f"d{k}" for k in range(len(values)))
    if math.isinf(tau):
        return uniform_weights(labels)
    if not tau > 0:
        raise ContractError(f"tau must be positive, got {tau}")
    return DomainWeights(values=_softmax(values / tau), labels=labels)


def domain_gradients(model, eval_corpus, normalize: bool = True) -> np.ndarray:
    """(P, K) matrix J: column k is the gradient of domain k's mean LL.

    Texts are scored in non-overlapping context windows; windows of equal
    length are batched, and group gradients are combined by token counts so
    each column is exactly the gradient of the (normalized) domain mean.
    """
    from .corpus import TokenBatch

    cfg = model.config
    J = np.zeros((model.params.size, eval_corpus.K))
    for k in range(eval_corpus.K):
        groups = {}
        n_texts = 0
        for text in eval_corpus.texts:
            if text.domain_index != k:
                continue
            n_texts += 1
            for s, e in tinylm.model.window_splits(len(text.tokens), cfg.context_length):
                groups.setdefault(e - s, []).append(text.tokens[s:e])
        if n_texts == 0:
            raise ContractError(f"domain {k} has no eval texts")
        total_tokens = sum(length * len(ws) for length, ws in groups.items())
        col = np.zeros(model.params.size)
        for length, windows in sorted(groups.items()):
            batch = TokenBatch(domain_index=k, sequences=np.stack(windows))
            g, _ = tinylm.grad_log_prob(model, batch)
            # g is the gradient of the token-mean; rescale to a token sum
            col += g * (length * len(windows))
        col /= total_tokens if normalize else n_texts
        J[:, k] = col
    if not np.all(np.isfinite(J)):
        raise NumericalError("NaN in domain Jacobian")
    return J


def gram_matrix(model, eval_corpus, normalize: bool = True) -> DomainJacobianGram:
    """JtJ over the evaluation corpus with the active LL normalization."""
    J = domain_gradients(model, eval_corpus, normalize)
    gram = J.T @ J
    gram = 0.5 * (gram + gram.T)  # exact symmetry despite float reduction order
    return DomainJacobianGram(gram=gram, model_step=model.step, normalized=normalize)


def adjusted_lld_weights(diff, gram: DomainJacobianGram, tau: float, ridge: float | None = None, labels=None) -> tuple:
    """Solve (gram + ridge*I) tilde = diff, then softmax(tilde / tau).

    The ridge starts at 1e-8 * trace/K (or the given value) and escalates by
    decades until the condition number drops below 1e12; if even a ridge at
    the trace scale cannot fix conditioning, the raw rule is advised.
    """
    values = np.asarray(getattr(diff, "values", diff), dtype=np.float64)
    K = gram.K
    if values.shape != (K,):
        raise ContractError(f"diff has shape {values.shape}, gram is {K}x{K}")
    trace = float(np.trace(gram.gram))
    if trace <= 0.0:
        raise MethodPreconditionError(
            "gram matrix carries no gradient signal; use raw_lld_weights"
        )
    lam = ridge if ridge is not None else 1e-8 * trace / K
    ceiling = trace * 10.0
    while True:
        matrix = gram.gram + lam * np.eye(K)
        if np.linalg.cond(matrix) < MAX_CONDITION:
            break
        if lam >= ceiling:
            raise MethodPreconditionError(
                "gram matrix is singular even at maximum ridge; use raw_lld_weights"
            )
        lam = max(lam * 10.0, 1e-300)
    tilde = TildeWeights(values=np.linalg.solve(matrix, values), ridge_used=lam)
    return raw_lld_weights(tilde, tau, labels), tilde


def solve_regularized(tilde, tau: float, prior: DomainWeights) -> DomainWeights:
    """Maximizer of pi . tilde - tau * KL(pi, prior) over the simplex.

    Closed form: pi_k proportional to prior_k * exp(tilde_k / tau). With a
    uniform prior this is the raw softmax rule.
    """
    values = np.asarray(getattr(tilde, "values", tilde), dtype=np.float64)
    if not tau > 0:
        raise ContractError(f"tau must be positive, got {tau}")
    if np.any(prior.values <= 0):
        raise ContractError("prior must be strictly positive (KL undefined off support)")
    logw = np.log(prior.values) + values / tau
    return DomainWeights(values=_softmax(logw), labels=prior.labels)


def mirror_descent_step(prior: DomainWeights, tilde, tau: float) -> DomainWeights:
    """One mirror-descent step from the prior under the negative-entropy map.

    Dual ascent z = grad h(prior) + tilde/tau with grad h(pi)_k = log pi_k + 1,
    mapped back to the simplex; agrees with solve_regularized to 1e-12.
    """
    values = np.asarray(getattr(tilde, "values", tilde), dtype=np.float64)
    if not tau > 0:
        raise ContractError(f"tau must be positive, got {tau}")
    if np.any(prior.values <= 0):
        raise ContractError("prior must be strictly positive (KL undefined off support)")
    z = (np.log(prior.values) + 1.0) + values / tau
    w = np.exp(z - z.max())
    return DomainWeights(values=w / w.sum(), labels=prior.labels)


def aggregate_geometric(traj: WeightTrajectory) -> DomainWeights:
    """Normalized geometric mean over the trajectory, computed in log space.

    This is the minimizer over the simplex of the summed KL(pi, pi_t), which
    is only defined for strictly positive trajectory entries.
    """
    stacked = traj.stacked()
    if np.any(stacked <= 0):
        raise ContractError(
            "geometric aggregation needs strictly positive weights; "
            "a zero component puts the KL objective off its domain"
        )
    logmean = np.log(stacked).mean(axis=0)
    return DomainWeights(values=_softmax(logmean), labels=traj.labels)


def aggregate_arithmetic(traj: WeightTrajectory) -> DomainWeights:
    """Componentwise mean; a simplex point by convexity."""
    mean = traj.stacked().mean(axis=0)
    return DomainWeights(values=mean / mean.sum(), labels=traj.labels)


def kl_simplex(p: DomainWeights, q: DomainWeights) -> float:
    """KL(p || q) in nats with 0 log 0 = 0; requires support(p) within support(q)."""
    pv, qv = p.values, q.values
    mask = pv > 0
    if np.any(qv[mask] <= 0):
        raise ContractError("KL undefined: p has mass where q has none")
    return float((pv[mask] * (np.log(pv[mask]) - np.log(qv[mask]))).sum())


def jsd(p: DomainWeights, q: DomainWeights) -> float:
    """Jensen-Shannon divergence in nats; defined everywhere, bounded by ln 2."""
    pv, qv = p.values, q.values
    m = 0.5 * (pv + qv)

    def half(a):
        mask = a > 0
        return float((a[mask] * (np.log(a[mask]) - np.log(m[mask]))).sum())

    return 0.5 * half(pv) + 0.5 * half(qv)


def predicted_ll_delta(gram: DomainJacobianGram, pi: DomainWeights, eta: float) -> np.ndarray:
    """First-order prediction eta * (JtJ) pi of the per-domain LL change."""
    if pi.K != gram.K:
        raise ContractError(f"weights have K={pi.K}, gram is {gram.K}x{gram.K}")
    return eta * (gram.gram @ pi.values)


def simplex_grid(K: int, grid_step: float) -> np.ndarray:
    """All barycentric grid points with denominator round(1/grid_step), in
    lexicographic order of the weight tuples."""
    n = round(1.0 / grid_step)
    if n < 1:
        raise ContractError(f"grid_step {grid_step} coarser than the whole simplex")
    if K == 1:
        return np.ones((1, 1))
    if K == 2:
        i = np.arange(n + 1)
        return np.stack([i, n - i], axis=1) / n
    if K == 3:
        blocks = []
        for i in range(n + 1):
            j = np.arange(n - i + 1)
            blocks.append(np.stack([np.full(len(j), i), j, n - i - j], axis=1))
        return np.concatenate(blocks) / n
    raise ContractError(f"brute force supports K <= 3, got {K}")


def brute_force_simplex_opt(objective, K: int, grid_step: float, mode: str = "max", labels=None) -> DomainWeights:
    """Best barycentric grid point; the test oracle for the closed forms.

    The objective is called once with the full (n_points, K) array and must
    return n_points values; objectives that only handle single points are
    applied row by row. Ties go to the lexicographically first grid point.
    """
    if mode not in ("min", "max"):
        raise ContractError(f"mode must be 'min' or 'max', got {mode!r}")
    points = simplex_grid(K, grid_step)
    try:
        values = np.asarray(objective(points), dtype=np.float64)
        if values.shape != (len(points),):
            raise TypeError
    except (TypeError, ValueError):
        values = np.array([float(objective(p)) for p in points])
    best = int(values.argmin() if mode == "min" else values.argmax())
    if labels is None:
        labels = tuple(f"d{k}" for k in range(K))
    return DomainWeights(values=points[best], labels=labels)


# ---------------------------------------------------------------------------
# weights file


def write_weights(path, weights: DomainWeights, tau: float, method: str, source_steps,
                  force: bool = False, extra: dict | None = None) -> Path:
    """extra folds provenance keys (digests, seeds) into the file; readers skip them."""
    if method not in WEIGHT_METHODS:
        raise ContractError(f"method must be one of {WEIGHT_METHODS}, got {method!r}")
    path = Path(path)
    if path.exists() and not force:
        raise OverwriteError(f"{path} exists; pass force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "labels": list(weights.labels),
        "values": [float(v) for v in weights.values],
        "tau": "inf" if math.isinf(tau) else tau,
        "method": method,
        "source_steps": list(source_steps),
    }
    if extra:
        overlap = sorted(set(extra) & set(payload))
        if overlap:
            raise ContractError(f"extra keys collide with weight fields: {overlap}")
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_weights(path) -> tuple:
    """Returns (DomainWeights, meta) and re-validates the simplex invariant."""
    payload = json.loads(Path(path).read_text())
    weights = DomainWeights(values=np.array(payload["values"]), labels=tuple(payload["labels"]))
    tau = math.inf if payload["tau"] == "inf" else float(payload["tau"])
    if payload["method"] not in WEIGHT_METHODS:
        raise ContractError(f"unknown weights method {payload['method']!r}")
    meta = {"tau": tau, "method": payload["method"], "source_steps": list(payload["source_steps"])}
    return weights, meta
