"""Fast self-checks behind the `verify` subcommand.

Each check exercises one load-bearing piece against an independent oracle
(closed forms, finite differences, brute-force search, byte comparisons).
This is the quick tripwire version of the full test suite: seconds, not
minutes, and no fixtures on disk outside a temp directory.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import corpus, llspace, mixopt, rngtools, tinylm


def _check_mirror_descent_closed_form():
    gen = rngtools.stream(5150, "verify", "mirror")
    for _ in range(200):
        k = int(gen.integers(2, 7))
        prior = mixopt.DomainWeights(values=gen.dirichlet(np.ones(k)),
                                     labels=tuple(f"d{i}" for i in range(k)))
        tilde = mixopt.TildeWeights(values=gen.normal(0, 2, size=k))
        tau = float(gen.uniform(0.05, 5.0))
        a = mixopt.solve_regularized(tilde, tau, prior)
        b = mixopt.mirror_descent_step(prior, tilde, tau)
        assert np.max(np.abs(a.values - b.values)) < 1e-12, \
            "mirror step drifted from closed form"


def _check_softmax_weights():
    diff = mixopt.TildeWeights(values=np.array([1.0, 0.0]))
    w = mixopt.raw_lld_weights(diff, 1.0)
    expect = np.exp([1.0, 0.0])
    expect = expect / expect.sum()
    assert np.allclose(w.values, expect, atol=1e-15), "softmax weights off"
    w_inf = mixopt.raw_lld_weights(diff, np.inf)
    assert np.array_equal(w_inf.values, np.array([0.5, 0.5])), "tau=inf must be exactly uniform"


def _check_brute_force_agreement():
    gen = rngtools.stream(5150, "verify", "grid")
    for _ in range(5):
        k = 3
        prior = gen.dirichlet(np.ones(k))
        tilde = mixopt.TildeWeights(values=gen.normal(0, 1, size=k))
        tau = 1.0
        labels = tuple(f"d{i}" for i in range(k))
        closed = mixopt.solve_regularized(tilde, tau, mixopt.DomainWeights(
            values=prior, labels=labels))

        def objective(points):
            dots = points @ tilde.values
            kls = np.array([
                mixopt.kl_simplex(
                    mixopt.DomainWeights(values=p, labels=labels),
                    mixopt.DomainWeights(values=prior, labels=labels))
                if np.all(prior[p > 0] > 0) else np.inf
                for p in points
            ])
            return dots - tau * kls

        best = mixopt.brute_force_simplex_opt(objective, k, grid_step=0.01, mode="max",
                                              labels=labels)
        assert np.max(np.abs(best.values - closed.values)) < 0.02, \
            "closed form and grid search disagree"


def _check_gradient_fd():
    cfg = tinylm.ModelConfig(vocab=11, layers=1, heads=1, embed_dim=8, context_length=12)
    model = tinylm.init_model(cfg, seed=17)
    gen = rngtools.stream(5150, "verify", "fd")
    batch = corpus.TokenBatch(
        domain_index=0,
        sequences=gen.integers(0, 11, size=(2, 12)).astype(np.uint8),
    )
    grad, _ = tinylm.grad_log_prob(model, batch)
    direction = gen.normal(size=grad.size)
    direction /= np.linalg.norm(direction)
    eps = 1e-5
    plus = model.replace(params=model.params + eps * direction)
    minus = model.replace(params=model.params - eps * direction)
    fd = (tinylm.batch_mean_ll(plus, batch) - tinylm.batch_mean_ll(minus, batch)) / (2 * eps)
    analytic = float(grad @ direction)
    denom = max(abs(fd), 1e-3)
    assert abs(fd - analytic) / denom < 1e-4, "analytic gradient disagrees with finite diff"


def _check_corpus_determinism():
    spec = corpus.DomainSpec(name="v", order=1, transition_seed=33, alphabet_size=32, skew=0.5)
    a = corpus.generate_domain(spec, train_bytes=4000, rng_seed=8)
    b = corpus.generate_domain(spec, train_bytes=4000, rng_seed=8)
    assert np.array_equal(a.tokens, b.tokens), "corpus generation not deterministic"
    assert a.train_end == b.train_end


def _check_checkpoint_roundtrip():
    cfg = tinylm.ModelConfig(vocab=11, layers=1, heads=1, embed_dim=8, context_length=12)
    model = tinylm.init_model(cfg, seed=23)
    with tempfile.TemporaryDirectory() as td:
        path = Path(td) / "m.mxk"
        tinylm.save_checkpoint(path, model)
        back = tinylm.load_checkpoint(path)
        assert np.array_equal(back.params, model.params), "checkpoint roundtrip not bit-exact"
        assert back.config == model.config


def _check_centering_and_distance():
    matrix = llspace.TextLLMatrix(rows=["a", "b"], cols=["t1", "t2"],
                                  L=np.array([[1.0, 2.0], [4.0, 3.0]]))
    centered = llspace.double_center(matrix)
    assert np.allclose(centered.Q, [[-0.5, 0.5], [0.5, -0.5]]), "double centering off"
    # ||q_a - q_b||^2 = 2, N = 2 -> 2 / (2 * 2) = 0.5 nats per text
    assert abs(llspace.kl_estimate(centered, "a", "b") - 0.5) < 1e-12, "plug-in distance off"


def _check_aggregation():
    traj = mixopt.WeightTrajectory()
    traj.append(0, mixopt.DomainWeights(values=np.array([0.9, 0.1]), labels=("x", "y")))
    traj.append(1, mixopt.DomainWeights(values=np.array([0.9, 0.1]), labels=("x", "y")))
    traj.append(2, mixopt.DomainWeights(values=np.array([0.3, 0.7]), labels=("x", "y")))
    agg = mixopt.aggregate_geometric(traj)
    raw = np.array([(0.9 * 0.9 * 0.3) ** (1 / 3), (0.1 * 0.1 * 0.7) ** (1 / 3)])
    assert np.allclose(agg.values, raw / raw.sum(), atol=1e-12), "geometric aggregate off"


CHECKS = (
    ("mirror descent matches closed form", _check_mirror_descent_closed_form),
    ("softmax weight rule", _check_softmax_weights),
    ("closed form matches grid search", _check_brute_force_agreement),
    ("gradient matches finite differences", _check_gradient_fd),
    ("corpus generation deterministic", _check_corpus_determinism),
    ("checkpoint roundtrip bit-exact", _check_checkpoint_roundtrip),
    ("centering and plug-in distance", _check_centering_and_distance),
    ("geometric aggregation", _check_aggregation),
)


def run_all(out=print) -> bool:
    """Run every check; returns True when all pass."""
    ok = True
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as exc:  # report and continue: show the full picture
            ok = False
            out(f"FAIL {name}: {exc}")
        else:
            out(f"PASS {name}")
    return ok
