"""Corpus generation, evaluation chunking, sampling, and file round-trips."""

import math

import numpy as np
import pytest

from mixalign import corpus, rngtools
from mixalign.errors import ConfigError, ContractError, OverwriteError


def test_degenerate_skew_all_mass_token7():
    # transition_seed=117 found by search: its skew=inf one-hot column is token 7
    spec = corpus.DomainSpec(name="seven", order=0, transition_seed=117, skew=math.inf)
    rows = spec.transition_matrix()
    assert rows.shape == (1, 256)
    assert rows[0, 7] == 1.0
    dom = corpus.generate_domain(spec, train_bytes=100, rng_seed=0, heldout_fraction=0.0)
    assert dom.byte_count == 100
    assert np.all(dom.tokens == 7)


def test_generation_deterministic():
    spec = corpus.DomainSpec(name="a", order=1, transition_seed=5, alphabet_size=16, skew=0.5)
    d1 = corpus.generate_domain(spec, train_bytes=4096, rng_seed=9)
    d2 = corpus.generate_domain(spec, train_bytes=4096, rng_seed=9)
    assert np.array_equal(d1.tokens, d2.tokens)
    d3 = corpus.generate_domain(spec, train_bytes=4096, rng_seed=10)
    assert not np.array_equal(d1.tokens, d3.tokens)


def test_equal_specs_generate_identical_corpora():
    kw = dict(name="a", order=1, transition_seed=5, alphabet_size=16, skew=0.5)
    d1 = corpus.generate_domain(corpus.DomainSpec(**kw), train_bytes=2048, rng_seed=3)
    d2 = corpus.generate_domain(corpus.DomainSpec(**kw), train_bytes=2048, rng_seed=3)
    assert d1.tokens.tobytes() == d2.tokens.tobytes()


def test_spec_validation():
    with pytest.raises(ConfigError):
        corpus.DomainSpec(name="", order=0, transition_seed=0)
    with pytest.raises(ConfigError):
        corpus.DomainSpec(name="x", order=-1, transition_seed=0)
    with pytest.raises(ConfigError):
        corpus.DomainSpec(name="x", order=0, transition_seed=0, alphabet_size=1)
    with pytest.raises(ConfigError):
        corpus.DomainSpec(name="x", order=0, transition_seed=0, skew=0.0)
    with pytest.raises(ConfigError):
        # 256**3 transition contexts would not fit the supported table size
        corpus.DomainSpec(name="x", order=3, transition_seed=0, alphabet_size=256)


def test_transition_rows_are_distributions_and_skew_orders_entropy():
    def mean_row_entropy(skew):
        spec = corpus.DomainSpec(name="x", order=1, transition_seed=2, alphabet_size=64, skew=skew)
        rows = spec.transition_matrix()
        assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-12)
        p = np.clip(rows, 1e-300, None)
        return float(-(rows * np.log(p)).sum(axis=1).mean())

    # smaller skew concentrates rows on fewer tokens
    assert mean_row_entropy(0.05) < mean_row_entropy(0.5) < mean_row_entropy(50.0)


def test_empirical_bigram_matrix_matches_spec():
    # frequency-weighted mean total-variation between empirical conditional
    # rows and the materialized transition matrix, 1 MiB at order 1 / skew 0.1
    spec = corpus.DomainSpec(name="tv", order=1, transition_seed=11, alphabet_size=256, skew=0.1)
    dom = corpus.generate_domain(spec, train_bytes=1 << 20, rng_seed=7)
    rows = spec.transition_matrix()
    toks = dom.train_tokens.astype(np.int64)
    counts = np.zeros((256, 256))
    np.add.at(counts, (toks[:-1], toks[1:]), 1)
    totals = counts.sum(axis=1)
    mask = totals > 0
    emp = counts[mask] / totals[mask, None]
    tv = 0.5 * np.abs(emp - rows[mask]).sum(axis=1)
    weighted = float((tv * totals[mask]).sum() / totals[mask].sum())
    assert weighted < 0.05


def test_train_bytes_too_small_names_minimum():
    spec = corpus.DomainSpec(name="x", order=0, transition_seed=0)
    with pytest.raises(ConfigError, match="minimum is 64"):
        corpus.generate_domain(spec, train_bytes=10, rng_seed=0, min_train_bytes=64)


def _domains(n_domains=3, train_bytes=40960, alphabet=32):
    doms = []
    for k in range(n_domains):
        spec = corpus.DomainSpec(
            name=f"d{k}", order=1, transition_seed=100 + k, alphabet_size=alphabet, skew=0.3
        )
        doms.append(corpus.generate_domain(spec, train_bytes=train_bytes, rng_seed=50 + k))
    return doms


def test_eval_corpus_counts_and_lengths():
    doms = _domains(3)
    ev = corpus.build_eval_corpus(doms, texts_per_domain=10, chunk_bytes=256, rng_seed=1)
    assert ev.N == 30
    assert ev.K == 3
    assert ev.per_domain_counts == [10, 10, 10]
    assert all(t.byte_length == 256 for t in ev.texts)
    assert all(len(t.tokens) == 256 for t in ev.texts)
    assert ev.per_domain_mean_tokens == [256.0, 256.0, 256.0]


def test_eval_texts_disjoint_from_training_region():
    doms = _domains(2)
    ev = corpus.build_eval_corpus(doms, texts_per_domain=8, chunk_bytes=128, rng_seed=4)
    for t in ev.texts:
        dom = doms[t.domain_index]
        assert t.offset >= dom.train_end
        assert t.offset + t.byte_length <= dom.byte_count
        assert np.array_equal(t.tokens, dom.tokens[t.offset : t.offset + t.byte_length])


def test_eval_shortfall_error_reports_missing_bytes():
    doms = _domains(1, train_bytes=2048)
    with pytest.raises(ConfigError, match="short by"):
        corpus.build_eval_corpus(doms, texts_per_domain=50, chunk_bytes=1024, rng_seed=0)


def test_eval_corpus_deterministic_digest():
    doms = _domains(2)
    e1 = corpus.build_eval_corpus(doms, texts_per_domain=6, chunk_bytes=200, rng_seed=9)
    e2 = corpus.build_eval_corpus(doms, texts_per_domain=6, chunk_bytes=200, rng_seed=9)
    assert e1.digest() == e2.digest()
    e3 = corpus.build_eval_corpus(doms, texts_per_domain=6, chunk_bytes=200, rng_seed=10)
    assert e1.digest() != e3.digest()


def test_eval_variable_chunk_lengths():
    doms = _domains(2)
    ev = corpus.build_eval_corpus(
        doms, texts_per_domain=5, chunk_bytes=256, rng_seed=2, variable_chunk=(64, 256)
    )
    assert ev.per_domain_counts == [5, 5]
    for t in ev.texts:
        assert 64 <= t.byte_length <= 256
        dom = doms[t.domain_index]
        assert t.offset >= dom.train_end


def test_sample_domain_degenerate_and_frequencies():
    gen = rngtools.stream(0, "sample-domain")
    onehot = np.array([0.0, 0.0, 1.0, 0.0])
    assert all(corpus.sample_domain(onehot, gen) == 2 for _ in range(50))

    uniform = np.full(4, 0.25)
    draws = np.array([corpus.sample_domain(uniform, gen) for _ in range(100_000)])
    freqs = np.bincount(draws, minlength=4) / len(draws)
    assert np.all(np.abs(freqs - 0.25) < 0.01)

    skewed = np.array([0.75, 0.25])
    draws = np.array([corpus.sample_domain(skewed, gen) for _ in range(100_000)])
    freqs = np.bincount(draws, minlength=2) / len(draws)
    assert np.all(np.abs(freqs - skewed) < 0.01)


def test_sample_domain_consumes_one_draw():
    g1 = rngtools.stream(7, "draw-count")
    g2 = rngtools.stream(7, "draw-count")
    corpus.sample_domain(np.array([0.5, 0.5]), g1)
    g2.random()
    assert g1.random() == g2.random()


def test_sample_batch_forced_single_window():
    spec = corpus.DomainSpec(name="x", order=0, transition_seed=3, alphabet_size=8, skew=1.0)
    dom = corpus.generate_domain(spec, train_bytes=64, rng_seed=1, heldout_fraction=0.0)
    gen = rngtools.stream(0, "batch")
    batch = corpus.sample_batch(dom, window_length=64, windows=3, rng=gen)
    assert batch.total_tokens == 192
    assert np.array_equal(batch.sequences, np.tile(dom.train_tokens, (3, 1)))


def test_sample_batch_shapes_and_determinism():
    doms = _domains(1)
    b1 = corpus.sample_batch(doms[0], 256, 8, rngtools.stream(4, "b"), domain_index=0)
    assert b1.sequences.shape == (8, 256)
    assert b1.total_tokens == 2048
    b2 = corpus.sample_batch(doms[0], 256, 8, rngtools.stream(4, "b"), domain_index=0)
    assert np.array_equal(b1.sequences, b2.sequences)
    with pytest.raises(ContractError):
        corpus.sample_batch(doms[0], doms[0].train_end + 1, 1, rngtools.stream(4, "b"))


def test_corpus_dir_roundtrip(tmp_path):
    doms = _domains(2, train_bytes=4096)
    manifest = corpus.write_corpus_dir(tmp_path, doms, config_digest="abc", seeds={"master": 1})
    assert manifest.exists()
    with pytest.raises(OverwriteError):
        corpus.write_corpus_dir(tmp_path, doms)
    back = corpus.read_corpus_dir(tmp_path)
    assert len(back) == 2
    for orig, rt in zip(doms, back):
        assert rt.spec == orig.spec
        assert rt.train_end == orig.train_end
        assert np.array_equal(rt.tokens, orig.tokens)


def test_eval_manifest_roundtrip(tmp_path):
    doms = _domains(2, train_bytes=4096)
    corpus.write_corpus_dir(tmp_path, doms)
    ev = corpus.build_eval_corpus(doms, texts_per_domain=3, chunk_bytes=64, rng_seed=5)
    corpus.write_eval_manifest(tmp_path, ev)
    back = corpus.read_eval_corpus(tmp_path, corpus.read_corpus_dir(tmp_path))
    assert back.digest() == ev.digest()
    assert back.text_ids == ev.text_ids
    for a, b in zip(ev.texts, back.texts):
        assert np.array_equal(a.tokens, b.tokens)


def test_inf_skew_serializes_through_manifest(tmp_path):
    spec = corpus.DomainSpec(name="hot", order=0, transition_seed=117, skew=math.inf)
    dom = corpus.generate_domain(spec, train_bytes=128, rng_seed=0)
    corpus.write_corpus_dir(tmp_path, [dom])
    back = corpus.read_corpus_dir(tmp_path)
    assert math.isinf(back[0].spec.skew)
    assert np.array_equal(back[0].tokens, dom.tokens)
