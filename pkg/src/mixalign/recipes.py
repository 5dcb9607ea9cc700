"""Two-pass training recipes and baselines.

First pass: train from the base checkpoint while re-estimating domain
weights on a schedule, then aggregate the visited weights into a single
fixed mixture. Second pass: retrain from the same base under that fixed
mixture, never touching the target again. Baselines (uniform sampling,
logit distillation) run through the same fixed-weight engine so that
matched seeds mean matched data order.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import corpus as corpus_mod
from . import llspace, mixopt, rngtools, tinylm
from .errors import ContractError, MethodPreconditionError, OverwriteError

METHOD_UNIFORM = "uniform"
METHOD_ITERATIVE = "iterative_lld"
METHOD_ADJUSTED = "adjusted_lld"
METHOD_AGGREGATED = "aggregated_lld"
METHOD_DISTILL_KL = "distill_kl"
METHOD_DISTILL_KL_CE = "distill_kl_ce"
METHODS = (
    METHOD_UNIFORM,
    METHOD_ITERATIVE,
    METHOD_ADJUSTED,
    METHOD_AGGREGATED,
    METHOD_DISTILL_KL,
    METHOD_DISTILL_KL_CE,
)
DISTILL_METHODS = (METHOD_DISTILL_KL, METHOD_DISTILL_KL_CE)

# Stream family names. The fixed-weight pass must use the same family for
# every method that goes through it, so that equal weights imply equal
# batches (the tau=inf run is required to be bit-identical to uniform).
_PASS_FIRST = "first-pass"
_PASS_FIXED = "second-pass"
_PASS_TARGET = "target-pass"

SUMMARY_HEADER = ["run_id", "method", "tau", "seed", "final_kl_bits_per_byte"]


@dataclass(frozen=True)
class EstimationSchedule:
    """Steps at which the first pass re-estimates weights, within [0, t_max)."""

    steps: tuple
    t_max: int

    def __post_init__(self):
        if self.t_max < 1:
            raise ContractError(f"t_max must be >= 1, got {self.t_max}")
        steps = tuple(int(s) for s in self.steps)
        if len(steps) == 0:
            raise ContractError("estimation schedule is empty")
        if list(steps) != sorted(set(steps)):
            raise ContractError("schedule steps must be strictly increasing")
        if steps[0] != 0:
            raise ContractError("schedule must include step 0")
        if steps[-1] >= self.t_max:
            raise ContractError(
                f"schedule step {steps[-1]} outside [0, {self.t_max})"
            )
        if steps[0] < 0:
            raise ContractError("schedule steps must be nonnegative")
        object.__setattr__(self, "steps", steps)


def desk_schedule(t_max: int = 2000, late_every: int = 200) -> EstimationSchedule:
    """Dense-early, sparse-late: powers of two through 512, then a fixed stride."""
    if late_every < 1:
        raise ContractError(f"late_every must be >= 1, got {late_every}")
    steps = {0}
    p = 1
    while p <= min(512, t_max - 1):
        steps.add(p)
        p *= 2
    s = 512 + late_every - (512 % late_every)  # first multiple past the ramp
    while s < t_max:
        steps.add(s)
        s += late_every
    return EstimationSchedule(steps=tuple(sorted(steps)), t_max=t_max)


@dataclass(frozen=True)
class TrainSettings:
    """Knobs shared by every pass; window_length=None means full context."""

    windows_per_batch: int = 8
    window_length: int | None = None
    lr_max: float = 6e-4
    lr_min: float = 6e-5
    warmup_frac: float = 0.1
    normalize_ll: bool = True

    def __post_init__(self):
        if self.windows_per_batch < 1:
            raise ContractError("windows_per_batch must be >= 1")
        if self.window_length is not None and self.window_length < 2:
            raise ContractError("window_length must be >= 2")
        if not (0.0 < self.lr_min <= self.lr_max):
            raise ContractError("need 0 < lr_min <= lr_max")
        if not (0.0 <= self.warmup_frac < 1.0):
            raise ContractError("warmup_frac must be in [0, 1)")

    def schedule_for(self, t_max: int) -> tinylm.LRSchedule:
        warmup = int(round(self.warmup_frac * t_max))
        warmup = min(warmup, t_max - 1)
        return tinylm.LRSchedule(
            warmup_steps=warmup, total_steps=t_max,
            lr_max=self.lr_max, lr_min=self.lr_min,
        )


@dataclass(frozen=True)
class RunConfig:
    run_id: str
    method: str
    tau: float
    schedule: EstimationSchedule
    model: tinylm.ModelConfig
    settings: TrainSettings
    seed: int
    checkpoint_every: int = 200

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if not self.run_id:
            raise ContractError("run_id is empty")
        # run ids end up in CSV cells and "run@step" row labels
        if any(c in self.run_id for c in ",@\n"):
            raise ContractError(f"run_id {self.run_id!r} contains a reserved character")
        if not (self.tau > 0):
            raise ContractError(f"tau must be positive (or inf), got {self.tau}")
        if not (1 <= self.checkpoint_every <= self.schedule.t_max):
            raise ContractError(
                f"checkpoint_every {self.checkpoint_every} outside [1, {self.schedule.t_max}]"
            )


@dataclass(frozen=True)
class RunReport:
    """Everything Table-1-like summaries need about one finished run.

    kl_units is bits_per_byte when the target exposes text-level likelihoods
    and l2_domain_ll when only domain means were importable. wallclock is
    measured, so serialization drops it to keep report files reproducible.
    """

    run_id: str
    method: str
    tau: float
    seed: int
    final_kl: float
    kl_curve: tuple  # ((step, value), ...)
    weight_trajectory: mixopt.WeightTrajectory
    pi_star: mixopt.DomainWeights | None
    kl_units: str = llspace.BITS_PER_BYTE
    wallclock: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}")
        if self.kl_units not in (llspace.BITS_PER_BYTE, "l2_domain_ll"):
            raise ContractError(f"unknown kl units {self.kl_units!r}")
        curve = tuple((int(s), float(v)) for s, v in self.kl_curve)
        if not curve:
            raise ContractError("empty KL curve")
        steps = [s for s, _ in curve]
        if steps != sorted(set(steps)):
            raise ContractError("KL curve steps must be strictly increasing")
        if float(self.final_kl) != curve[-1][1]:
            raise ContractError("final_kl must equal the last KL curve point")
        object.__setattr__(self, "final_kl", float(self.final_kl))
        object.__setattr__(self, "kl_curve", curve)


def checkpoint_steps(t_max: int, every: int) -> list:
    """{0, every, 2*every, ...} plus t_max itself."""
    if not (1 <= every <= t_max):
        raise ContractError(f"checkpoint_every {every} outside [1, {t_max}]")
    return sorted(set(range(0, t_max, every)) | {t_max})


def eval_text_lls(model, eval_corpus, block: int = 64) -> np.ndarray:
    """Total log-likelihood in nats for every eval text, batched by window shape.

    Texts are split into non-overlapping context windows, each rescored from
    the BOS anchor, so totals match per-text scoring exactly up to BLAS
    reduction order. block bounds peak memory, not results.
    """
    cfg = model.config
    params = tinylm.param_views(model.params, cfg)
    totals = np.zeros(eval_corpus.N)
    buckets = {}  # window length -> (text index, window tokens)
    for idx, text in enumerate(eval_corpus.texts):
        for lo, hi in tinylm.model.window_splits(text.tokens.size, cfg.context_length):
            buckets.setdefault(hi - lo, []).append((idx, text.tokens[lo:hi]))
    for length in sorted(buckets):
        entries = buckets[length]
        owners = np.array([i for i, _ in entries])
        stacked = np.stack([w for _, w in entries])
        for lo in range(0, len(entries), block):
            seqs = stacked[lo:lo + block]
            logits, _ = tinylm.model.forward(params, cfg, seqs)
            lsm = tinylm.model._log_softmax(logits)
            b, t = seqs.shape
            picked = lsm[np.arange(b)[:, None], np.arange(t)[None, :], seqs]
            np.add.at(totals, owners[lo:lo + block], picked.sum(axis=1))
    return totals


def _snapshot(model, eval_corpus, normalize: bool, model_id: str):
    """Per-text LLs plus their per-domain aggregate, from one eval sweep."""
    lls = eval_text_lls(model, eval_corpus)
    scores = {
        text.text_id: (lls[i], text.tokens.size)
        for i, text in enumerate(eval_corpus.texts)
    }
    vec = llspace.domain_ll_vector(
        scores, eval_corpus, normalize=normalize, source_model=model_id
    )
    return lls, vec


def _check_corpora(corpora, eval_corpus):
    names = [c.spec.name for c in corpora]
    if names != list(eval_corpus.labels):
        raise ContractError(
            f"training corpora {names} do not match eval domains {list(eval_corpus.labels)}"
        )


def _batch_streams(seed: int, pass_name: str, labels):
    domain_rng = rngtools.stream(seed, pass_name, "domain-choice")
    batch_rngs = {
        k: rngtools.stream(seed, pass_name, "batch", k, name)
        for k, name in enumerate(labels)
    }
    return domain_rng, batch_rngs


def _rng_snapshot(domain_rng, batch_rngs) -> dict:
    return {
        "domain": rngtools.generator_state(domain_rng),
        "batch": [rngtools.generator_state(batch_rngs[k]) for k in sorted(batch_rngs)],
    }


def _rng_restore(snap):
    domain_rng = rngtools.restore_generator(snap["domain"])
    batch_rngs = {k: rngtools.restore_generator(s) for k, s in enumerate(snap["batch"])}
    return domain_rng, batch_rngs


def _state_path(state_dir, step: int):
    return os.path.join(state_dir, f"state-{step:08d}.mxk")


def _saved_state_steps(state_dir) -> list:
    if state_dir is None or not os.path.isdir(state_dir):
        return []
    steps = []
    for name in os.listdir(state_dir):
        if name.startswith("state-") and name.endswith(".mxk"):
            steps.append(int(name[len("state-"):-len(".mxk")]))
    return sorted(steps)


def _save_state(state_dir, step, model, domain_rng, batch_rngs):
    """Persist params, optimizer moments, and both RNG streams at a loop step.

    The filename carries the loop step; the checkpoint's own step field stays
    the optimizer's update count (they coincide for a fresh base).
    """
    os.makedirs(state_dir, exist_ok=True)
    snap = model.replace(rng_state=_rng_snapshot(domain_rng, batch_rngs))
    tinylm.save_checkpoint(_state_path(state_dir, step), snap, force=True)


def _rebuild_trajectory(traj, state_dir, before_step, eval_corpus, normalize, run_id):
    """Rescore saved states below the resume point; scoring is deterministic,
    so the rebuilt rows match what the interrupted run had recorded."""
    for s in _saved_state_steps(state_dir):
        if s >= before_step:
            break
        model = tinylm.load_checkpoint(_state_path(state_dir, s))
        lls, vec = _snapshot(model, eval_corpus, normalize, f"{run_id}@{s}")
        traj.append(s, vec, lls)


def _estimate_weights(model, target_ll, eval_corpus, tau, rule, settings):
    _, vec = _snapshot(model, eval_corpus, settings.normalize_ll, "estimate")
    diff = mixopt.lld(target_ll, vec)
    labels = eval_corpus.labels
    if rule == "raw":
        return mixopt.raw_lld_weights(diff, tau, labels=labels)
    if rule == "adjusted":
        gram = mixopt.gram_matrix(model, eval_corpus, normalize=settings.normalize_ll)
        weights, _ = mixopt.adjusted_lld_weights(diff, gram, tau, labels=labels)
        return weights
    raise ContractError(f"unknown weight rule {rule!r}, expected raw or adjusted")


def first_pass(
    base,
    target_ll,
    corpora,
    eval_corpus,
    schedule: EstimationSchedule,
    tau: float,
    method: str = "raw",
    seed: int = 0,
    settings: TrainSettings = TrainSettings(),
):
    """Train from base while re-estimating weights at the scheduled steps.

    Returns (weight trajectory over the schedule, geometric aggregate of the
    visited weights, trained checkpoint). Weights estimated at step t steer
    sampling until the next scheduled step.
    """
    traj, pi_star, trained, _ = _first_pass_full(
        base, target_ll, corpora, eval_corpus, schedule, tau,
        rule=method, seed=seed, settings=settings,
        record_steps=(), run_id="first-pass",
    )
    return traj, pi_star, trained


def _weights_sidecar_path(state_dir, step: int):
    return os.path.join(state_dir, f"weights-{step:08d}.json")


def _save_weight_progress(state_dir, step, weight_traj, labels):
    payload = {
        "labels": list(labels),
        "entries": [[s, w.values.tolist()] for s, w in weight_traj.entries],
    }
    with open(_weights_sidecar_path(state_dir, step), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_weight_progress(state_dir, step):
    with open(_weights_sidecar_path(state_dir, step)) as fh:
        payload = json.load(fh)
    labels = tuple(payload["labels"])
    traj = mixopt.WeightTrajectory()
    for s, values in payload["entries"]:
        traj.append(s, mixopt.DomainWeights(values=np.array(values), labels=labels))
    return traj


def _first_pass_full(
    base,
    target_ll,
    corpora,
    eval_corpus,
    schedule,
    tau,
    rule,
    seed,
    settings,
    record_steps,
    run_id,
    state_dir=None,
    resume=False,
):
    _check_corpora(corpora, eval_corpus)
    if target_ll.K != eval_corpus.K:
        raise ContractError(f"target has K={target_ll.K}, eval corpus K={eval_corpus.K}")
    if target_ll.eval_digest and target_ll.eval_digest != eval_corpus.digest():
        raise ContractError("target LL vector was computed on a different eval corpus")
    if target_ll.normalized != settings.normalize_ll:
        raise ContractError(
            "target LL normalization does not match this run's normalize_ll setting"
        )

    t_max = schedule.t_max
    lr_sched = settings.schedule_for(t_max)
    window = settings.window_length or base.config.context_length
    domain_rng, batch_rngs = _batch_streams(seed, _PASS_FIRST, eval_corpus.labels)
    estimate_at = set(schedule.steps)
    record_at = set(record_steps)

    model = base
    start = 0
    weights = None
    weight_traj = mixopt.WeightTrajectory()
    ll_traj = llspace.Trajectory(run_id=run_id)
    saved = _saved_state_steps(state_dir) if resume else []
    if saved:
        start = saved[-1]
        model = tinylm.load_checkpoint(_state_path(state_dir, start))
        domain_rng, batch_rngs = _rng_restore(model.rng_state)
        weight_traj = _load_weight_progress(state_dir, start)
        weights = weight_traj.entries[-1][1] if weight_traj.entries else None
        _rebuild_trajectory(ll_traj, state_dir, start, eval_corpus,
                            settings.normalize_ll, run_id)
    for t in range(start, t_max):
        if t in record_at:
            if state_dir is not None:
                _save_state(state_dir, t, model, domain_rng, batch_rngs)
                _save_weight_progress(state_dir, t, weight_traj, eval_corpus.labels)
            lls, vec = _snapshot(model, eval_corpus, settings.normalize_ll, f"{run_id}@{t}")
            ll_traj.append(t, vec, lls)
        if t in estimate_at:
            weights = _estimate_weights(model, target_ll, eval_corpus, tau, rule, settings)
            weight_traj.append(t, weights)
        k = corpus_mod.sample_domain(weights, domain_rng)
        batch = corpus_mod.sample_batch(
            corpora[k], window, settings.windows_per_batch, batch_rngs[k], domain_index=k
        )
        grad, _ = tinylm.cross_entropy_grad(model, batch)
        model = tinylm.adamw_step(model, grad, tinylm.lr_at(lr_sched, t + 1))
    if state_dir is not None:
        _save_state(state_dir, t_max, model, domain_rng, batch_rngs)
        _save_weight_progress(state_dir, t_max, weight_traj, eval_corpus.labels)
    if t_max in record_at:
        lls, vec = _snapshot(model, eval_corpus, settings.normalize_ll, f"{run_id}@{t_max}")
        ll_traj.append(t_max, vec, lls)

    pi_star = mixopt.aggregate_geometric(weight_traj)
    return weight_traj, pi_star, model, ll_traj


def second_pass(
    base,
    pi_star: mixopt.DomainWeights,
    corpora,
    eval_corpus,
    t_max: int,
    checkpoint_every: int,
    seed: int = 0,
    settings: TrainSettings = TrainSettings(),
    run_id: str = "second-pass",
):
    """Train from base under fixed weights, recording LLs at checkpoints.

    The target never enters: this pass only sees the corpora and the weight
    vector. Identical (weights, seeds, config) give identical checkpoints,
    so a uniform pi_star reproduces the uniform baseline exactly.
    """
    traj, _ = _fixed_weight_pass(
        base, pi_star, corpora, eval_corpus, t_max, checkpoint_every,
        seed, settings, run_id, grad_kind="ce", teacher=None,
    )
    return traj


def _fixed_weight_pass(
    base,
    weights,
    corpora,
    eval_corpus,
    t_max,
    checkpoint_every,
    seed,
    settings,
    run_id,
    grad_kind,
    teacher,
    state_dir=None,
    resume=False,
):
    _check_corpora(corpora, eval_corpus)
    if tuple(weights.labels) != tuple(eval_corpus.labels):
        raise ContractError(
            f"weight labels {list(weights.labels)} do not match eval domains"
            f" {list(eval_corpus.labels)}"
        )
    if grad_kind == "ce":
        def grad_fn(model, batch):
            g, _ = tinylm.cross_entropy_grad(model, batch)
            return g
    else:
        spec = tinylm.LossSpec(kind=grad_kind, teacher=teacher)
        def grad_fn(model, batch):
            return tinylm.distill_grad(model, teacher, batch, spec)

    lr_sched = settings.schedule_for(t_max)
    window = settings.window_length or base.config.context_length
    domain_rng, batch_rngs = _batch_streams(seed, _PASS_FIXED, eval_corpus.labels)
    record_at = set(checkpoint_steps(t_max, checkpoint_every))

    model = base
    start = 0
    traj = llspace.Trajectory(run_id=run_id)
    saved = _saved_state_steps(state_dir) if resume else []
    if saved:
        start = saved[-1]
        model = tinylm.load_checkpoint(_state_path(state_dir, start))
        domain_rng, batch_rngs = _rng_restore(model.rng_state)
        _rebuild_trajectory(traj, state_dir, start, eval_corpus,
                            settings.normalize_ll, run_id)
    for t in range(start, t_max):
        if t in record_at:
            if state_dir is not None:
                _save_state(state_dir, t, model, domain_rng, batch_rngs)
            lls, vec = _snapshot(model, eval_corpus, settings.normalize_ll, f"{run_id}@{t}")
            traj.append(t, vec, lls)
        k = corpus_mod.sample_domain(weights, domain_rng)
        batch = corpus_mod.sample_batch(
            corpora[k], window, settings.windows_per_batch, batch_rngs[k], domain_index=k
        )
        model = tinylm.adamw_step(model, grad_fn(model, batch), tinylm.lr_at(lr_sched, t + 1))
    if state_dir is not None:
        _save_state(state_dir, t_max, model, domain_rng, batch_rngs)
    lls, vec = _snapshot(model, eval_corpus, settings.normalize_ll, f"{run_id}@{t_max}")
    traj.append(t_max, vec, lls)
    return traj, model


def _constant_uniform_trajectory(schedule: EstimationSchedule, labels) -> mixopt.WeightTrajectory:
    traj = mixopt.WeightTrajectory()
    for s in schedule.steps:
        traj.append(s, mixopt.uniform_weights(labels))
    return traj


def target_views(target, eval_corpus, normalize):
    """Normalize the three accepted target forms to (text row or None, domain vec).

    Accepts a checkpoint (scored here), a one-row text-level LL matrix, or a
    bare domain-level vector (which degrades the KL curve to L2 distance).
    """
    if isinstance(target, tinylm.ModelCheckpoint):
        lls, vec = _snapshot(target, eval_corpus, normalize, "target")
        return lls, vec
    if isinstance(target, llspace.TextLLMatrix):
        if len(target.rows) != 1:
            raise ContractError(
                f"imported LL table must have exactly one model row, got {len(target.rows)}"
            )
        if set(target.cols) != set(eval_corpus.text_ids):
            raise ContractError("imported LL table does not cover the eval corpus texts")
        order = [target.cols.index(tid) for tid in eval_corpus.text_ids]
        lls = target.L[0, order]
        scores = {
            text.text_id: (lls[i], text.tokens.size)
            for i, text in enumerate(eval_corpus.texts)
        }
        vec = llspace.domain_ll_vector(scores, eval_corpus, normalize=normalize,
                                       source_model=target.rows[0])
        return lls, vec
    if isinstance(target, llspace.DomainLLVector):
        if target.eval_digest and target.eval_digest != eval_corpus.digest():
            raise ContractError("imported domain LL vector came from a different eval corpus")
        if target.normalized != normalize:
            raise ContractError(
                "imported domain LL normalization does not match this run's setting"
            )
        return None, target
    raise ContractError(
        f"unsupported target descriptor type {type(target).__name__}"
    )


def _run_matrix(ll_traj, eval_corpus, target_row=None) -> llspace.TextLLMatrix:
    """Stack a run's recorded text-LL rows (plus the target's, if known)."""
    rows, blocks = [], []
    for step, _, text_row in ll_traj.checkpoints:
        if text_row is None:
            raise ContractError(f"checkpoint at step {step} recorded no text-level row")
        rows.append(f"{ll_traj.run_id}@{step}")
        blocks.append(text_row)
    if target_row is not None:
        rows.append("target")
        blocks.append(target_row)
    return llspace.TextLLMatrix(
        rows=rows,
        cols=list(eval_corpus.text_ids),
        L=np.stack(blocks),
        col_domains=[t.domain for t in eval_corpus.texts],
        col_token_counts=[t.tokens.size for t in eval_corpus.texts],
        col_byte_counts=[t.byte_length for t in eval_corpus.texts],
    )


def _kl_curve_bits(matrix, run_id, steps, eval_corpus):
    """Joint-center every recorded checkpoint with the target, then read distances."""
    centered = llspace.double_center(matrix)
    return tuple(
        (step, llspace.kl_estimate(centered, f"{run_id}@{step}", "target",
                                   eval_corpus=eval_corpus, units=llspace.BITS_PER_BYTE))
        for step in steps
    )


def _l2_curve(ll_traj, target_vec):
    return tuple(
        (step, float(np.linalg.norm(vec.values - target_vec.values)))
        for step, vec, _ in ll_traj.checkpoints
    )


@dataclass(frozen=True)
class RunResult:
    """Report plus the artifacts a caller may want to persist."""

    report: RunReport
    model: object  # final trained checkpoint
    ll_matrix: llspace.TextLLMatrix  # recorded rows, target row last when known


def run_method(config: RunConfig, base, target, corpora, eval_corpus,
               fixed_weights=None, state_dir=None, resume=False) -> RunReport:
    """Execute one method end to end and report its KL-vs-step curve.

    target may be a checkpoint, a one-row text-level LL table, or a
    domain-level LL vector; distillation requires the checkpoint since
    teacher logits only make sense under a shared tokenizer.

    fixed_weights short-circuits the aggregated method's first pass with an
    externally estimated mixture. state_dir persists resumable training
    state at every checkpoint step; with resume=True a later call continues
    bit-exactly from the last saved state.
    """
    return run_method_full(config, base, target, corpora, eval_corpus,
                           fixed_weights=fixed_weights,
                           state_dir=state_dir, resume=resume).report


def run_method_full(config: RunConfig, base, target, corpora, eval_corpus,
                    fixed_weights=None, state_dir=None, resume=False) -> RunResult:
    """run_method plus the final checkpoint and the recorded LL matrix."""
    started = time.perf_counter()
    if config.method in DISTILL_METHODS and not isinstance(target, tinylm.ModelCheckpoint):
        raise MethodPreconditionError(
            "distillation needs the target checkpoint itself: teacher and student "
            "must share the same tokenizer, which an imported LL table cannot attest"
        )
    if fixed_weights is not None and config.method != METHOD_AGGREGATED:
        raise ContractError("fixed_weights only applies to the aggregated_lld method")
    target_row, target_vec = target_views(target, eval_corpus, config.settings.normalize_ll)
    t_max = config.schedule.t_max
    labels = eval_corpus.labels

    def subdir(name):
        return None if state_dir is None else os.path.join(state_dir, name)

    pi_star = None
    if config.method == METHOD_UNIFORM:
        weight_traj = _constant_uniform_trajectory(config.schedule, labels)
        pi_star = mixopt.uniform_weights(labels)
        ll_traj, model = _fixed_weight_pass(
            base, pi_star, corpora, eval_corpus, t_max, config.checkpoint_every,
            config.seed, config.settings, config.run_id, grad_kind="ce",
            teacher=None, state_dir=state_dir, resume=resume,
        )
    elif config.method in (METHOD_ITERATIVE, METHOD_ADJUSTED):
        rule = "raw" if config.method == METHOD_ITERATIVE else "adjusted"
        weight_traj, pi_star, model, ll_traj = _first_pass_full(
            base, target_vec, corpora, eval_corpus, config.schedule, config.tau,
            rule=rule, seed=config.seed, settings=config.settings,
            record_steps=checkpoint_steps(t_max, config.checkpoint_every),
            run_id=config.run_id, state_dir=state_dir, resume=resume,
        )
    elif config.method == METHOD_AGGREGATED:
        pi_path = None if state_dir is None else os.path.join(state_dir, "pi_star.json")
        if fixed_weights is not None:
            if tuple(fixed_weights.labels) != tuple(labels):
                raise ContractError("fixed weights labels do not match the eval domains")
            pi_star = fixed_weights
            weight_traj = mixopt.WeightTrajectory()
            for s in config.schedule.steps:
                weight_traj.append(s, pi_star)
        elif resume and pi_path is not None and os.path.exists(pi_path):
            # first pass already finished in the interrupted run
            pi_star, _ = mixopt.read_weights(pi_path)
            first_states = _saved_state_steps(subdir("first"))
            if first_states:
                weight_traj = _load_weight_progress(subdir("first"), first_states[-1])
            else:
                weight_traj = mixopt.WeightTrajectory()
                for s in config.schedule.steps:
                    weight_traj.append(s, pi_star)
        else:
            # states (and so resumability) only exist at recording steps
            first_records = () if state_dir is None else checkpoint_steps(
                t_max, config.checkpoint_every
            )
            weight_traj, pi_star, _, _ = _first_pass_full(
                base, target_vec, corpora, eval_corpus, config.schedule, config.tau,
                rule="raw", seed=config.seed, settings=config.settings,
                record_steps=first_records,
                run_id=config.run_id, state_dir=subdir("first"), resume=resume,
            )
            if pi_path is not None:
                mixopt.write_weights(pi_path, pi_star, config.tau, "aggregated",
                                     config.schedule.steps, force=True)
        # fresh restart from the original base; the first-pass model is discarded
        ll_traj, model = _fixed_weight_pass(
            base, pi_star, corpora, eval_corpus, t_max, config.checkpoint_every,
            config.seed, config.settings, config.run_id, grad_kind="ce",
            teacher=None, state_dir=subdir("second"), resume=resume,
        )
    else:
        loss_kind = (tinylm.DISTILL_KL if config.method == METHOD_DISTILL_KL
                     else tinylm.DISTILL_KL_PLUS_CE)
        weight_traj = _constant_uniform_trajectory(config.schedule, labels)
        ll_traj, model = _fixed_weight_pass(
            base, mixopt.uniform_weights(labels), corpora, eval_corpus,
            t_max, config.checkpoint_every, config.seed, config.settings,
            config.run_id, grad_kind=loss_kind, teacher=target,
            state_dir=state_dir, resume=resume,
        )

    matrix = _run_matrix(ll_traj, eval_corpus, target_row)
    if target_row is not None:
        curve = _kl_curve_bits(matrix, config.run_id, ll_traj.steps, eval_corpus)
        units = llspace.BITS_PER_BYTE
    else:
        curve = _l2_curve(ll_traj, target_vec)
        units = "l2_domain_ll"
    report = RunReport(
        run_id=config.run_id,
        method=config.method,
        tau=config.tau,
        seed=config.seed,
        final_kl=curve[-1][1],
        kl_curve=curve,
        weight_trajectory=weight_traj,
        pi_star=pi_star,
        kl_units=units,
        wallclock=time.perf_counter() - started,
    )
    return RunResult(report=report, model=model, ll_matrix=matrix)


def ground_truth_recovery(pi_star: mixopt.DomainWeights, truth: mixopt.DomainWeights):
    """KL(pi_star, truth) next to KL(uniform, truth), both in nats.

    Argument order of the divergence is fixed as KL(weights, truth): the
    estimated (or uniform) mixture is the first argument.
    """
    if tuple(pi_star.labels) != tuple(truth.labels):
        raise ContractError(
            f"label mismatch: {list(pi_star.labels)} vs {list(truth.labels)}"
        )
    unif = mixopt.uniform_weights(truth.labels)
    return mixopt.kl_simplex(pi_star, truth), mixopt.kl_simplex(unif, truth)


def make_skewed_target(
    base_mixture: mixopt.DomainWeights,
    boost,
    steps: int,
    corpora,
    model_config: tinylm.ModelConfig,
    seed: int = 0,
    settings: TrainSettings = TrainSettings(),
):
    """Train a target on a boosted copy of base_mixture; return it with the truth.

    boost maps domain label -> positive factor (absent labels keep factor 1).
    The returned weights are the renormalized boosted mixture, the exact
    ground truth later recovery runs are scored against.
    """
    labels = list(base_mixture.labels)
    unknown = sorted(set(boost) - set(labels))
    if unknown:
        raise ContractError(f"boost names unknown domains: {unknown}")
    factors = np.array([float(boost.get(name, 1.0)) for name in labels])
    if np.any(factors <= 0) or not np.all(np.isfinite(factors)):
        raise ContractError("boost factors must be positive and finite")
    boosted = base_mixture.values * factors
    truth = mixopt.DomainWeights(values=boosted / boosted.sum(), labels=tuple(labels))

    names = [c.spec.name for c in corpora]
    if names != labels:
        raise ContractError(f"corpora {names} do not match mixture labels {labels}")
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")

    lr_sched = settings.schedule_for(steps)
    window = settings.window_length or model_config.context_length
    domain_rng, batch_rngs = _batch_streams(seed, _PASS_TARGET, labels)
    model = tinylm.init_model(model_config, seed)
    for t in range(steps):
        k = corpus_mod.sample_domain(truth, domain_rng)
        batch = corpus_mod.sample_batch(
            corpora[k], window, settings.windows_per_batch, batch_rngs[k], domain_index=k
        )
        grad, _ = tinylm.cross_entropy_grad(model, batch)
        model = tinylm.adamw_step(model, grad, tinylm.lr_at(lr_sched, t + 1))
    return model, truth


def _tau_to_json(tau: float):
    return "inf" if math.isinf(tau) else tau


def _tau_from_json(raw) -> float:
    return math.inf if raw == "inf" else float(raw)


def report_to_dict(report: RunReport) -> dict:
    """JSON-ready view; wallclock is deliberately absent (not reproducible)."""
    out = {
        "run_id": report.run_id,
        "method": report.method,
        "tau": _tau_to_json(report.tau),
        "seed": report.seed,
        "kl_units": report.kl_units,
        "final_kl": report.final_kl,
        "kl_curve": [[s, v] for s, v in report.kl_curve],
        "weight_trajectory": [
            [s, w.values.tolist()] for s, w in report.weight_trajectory.entries
        ],
        "labels": list(report.weight_trajectory.labels),
        "pi_star": None if report.pi_star is None else report.pi_star.values.tolist(),
    }
    return out


def write_report(path, report: RunReport, force: bool = False, extra: dict | None = None):
    """extra lets callers fold provenance keys (digests, seeds) into the file."""
    if os.path.exists(path) and not force:
        raise OverwriteError(f"{path} exists; pass force to overwrite")
    payload = report_to_dict(report)
    if extra:
        overlap = sorted(set(extra) & set(payload))
        if overlap:
            raise ContractError(f"extra keys collide with report fields: {overlap}")
        payload.update(extra)
    with open(path, "w") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_report(path) -> RunReport:
    """Rebuild a RunReport from disk; wallclock comes back as 0.0."""
    with open(path) as fh:
        raw = json.load(fh)
    labels = tuple(raw["labels"])
    traj = mixopt.WeightTrajectory()
    for step, values in raw["weight_trajectory"]:
        traj.append(step, mixopt.DomainWeights(values=np.array(values), labels=labels))
    pi_star = None
    if raw["pi_star"] is not None:
        pi_star = mixopt.DomainWeights(values=np.array(raw["pi_star"]), labels=labels)
    return RunReport(
        run_id=raw["run_id"],
        method=raw["method"],
        tau=_tau_from_json(raw["tau"]),
        seed=raw["seed"],
        final_kl=raw["final_kl"],
        kl_curve=tuple((s, v) for s, v in raw["kl_curve"]),
        weight_trajectory=traj,
        pi_star=pi_star,
        kl_units=raw["kl_units"],
    )


def write_summary_csv(path, reports, force: bool = False):
    """One row per run: run_id,method,tau,seed,final_kl_bits_per_byte."""
    if os.path.exists(path) and not force:
        raise OverwriteError(f"{path} exists; pass force to overwrite")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for rep in reports:
            tau = "inf" if math.isinf(rep.tau) else repr(rep.tau)
            writer.writerow([rep.run_id, rep.method, tau, rep.seed, repr(rep.final_kl)])
