import json
import math

import numpy as np
import pytest

from mixalign import corpus, llspace, mixopt, recipes, tinylm
from mixalign.errors import ContractError, MethodPreconditionError, OverwriteError

K = 4
LABELS = ("d0", "d1", "d2", "d3")


@pytest.fixture(scope="module")
def bench():
    """Tiny end-to-end rig: 4 domains, 16-token alphabet, 1-layer model."""
    specs = [
        corpus.DomainSpec(name=f"d{k}", order=1, transition_seed=20 + k,
                          alphabet_size=16, skew=0.3)
        for k in range(K)
    ]
    doms = [corpus.generate_domain(s, train_bytes=20000, rng_seed=5) for s in specs]
    ev = corpus.build_eval_corpus(doms, texts_per_domain=4, chunk_bytes=96, rng_seed=9)
    cfg = tinylm.ModelConfig(vocab=16, layers=1, heads=2, embed_dim=16, context_length=32)
    base = tinylm.init_model(cfg, seed=3)
    st = recipes.TrainSettings(windows_per_batch=4, window_length=32)
    bm = mixopt.uniform_weights(LABELS)
    target, truth = recipes.make_skewed_target(
        bm, {"d0": 2.0}, steps=8, corpora=doms, model_config=cfg, seed=7, settings=st
    )
    return {"doms": doms, "ev": ev, "cfg": cfg, "base": base, "st": st,
            "target": target, "truth": truth}


def test_schedule_validation():
    recipes.EstimationSchedule(steps=(0, 3, 7), t_max=8)
    with pytest.raises(ContractError):
        recipes.EstimationSchedule(steps=(), t_max=4)
    with pytest.raises(ContractError):
        recipes.EstimationSchedule(steps=(1, 2), t_max=4)  # missing 0
    with pytest.raises(ContractError):
        recipes.EstimationSchedule(steps=(0, 2, 2), t_max=4)
    with pytest.raises(ContractError):
        recipes.EstimationSchedule(steps=(0, 4), t_max=4)  # step == t_max
    with pytest.raises(ContractError):
        recipes.EstimationSchedule(steps=(0,), t_max=0)


def test_desk_schedule_shape():
    s = recipes.desk_schedule(2000)
    assert s.steps == (0, 1, 2, 4, 8, 16, 32, 64, 128, 256, 512,
                       600, 800, 1000, 1200, 1400, 1600, 1800)
    assert recipes.desk_schedule(800, late_every=200).steps[-1] == 600
    assert recipes.desk_schedule(1).steps == (0,)
    with pytest.raises(ContractError):
        recipes.desk_schedule(100, late_every=0)


def test_train_settings_validation():
    with pytest.raises(ContractError):
        recipes.TrainSettings(windows_per_batch=0)
    with pytest.raises(ContractError):
        recipes.TrainSettings(lr_min=2e-4, lr_max=1e-4)
    with pytest.raises(ContractError):
        recipes.TrainSettings(warmup_frac=1.0)
    with pytest.raises(ContractError):
        recipes.TrainSettings(window_length=1)
    # warmup never swallows the whole run
    sched = recipes.TrainSettings(warmup_frac=0.9).schedule_for(1)
    assert sched.warmup_steps == 0


def _config(run_id="r", method="uniform", tau=1.0, t_max=6, every=3, **kw):
    sched = recipes.EstimationSchedule(steps=(0, 2, 4), t_max=t_max)
    cfg = tinylm.ModelConfig(vocab=16, layers=1, heads=2, embed_dim=16, context_length=32)
    st = recipes.TrainSettings(windows_per_batch=4, window_length=32)
    return recipes.RunConfig(run_id=run_id, method=method, tau=tau, schedule=sched,
                             model=cfg, settings=st, seed=kw.get("seed", 2),
                             checkpoint_every=every)


def test_run_config_validation():
    _config()
    with pytest.raises(ContractError):
        _config(method="magic")
    with pytest.raises(ContractError):
        _config(run_id="a,b")
    with pytest.raises(ContractError):
        _config(run_id="a@3")
    with pytest.raises(ContractError):
        _config(run_id="")
    with pytest.raises(ContractError):
        _config(tau=0.0)
    with pytest.raises(ContractError):
        _config(every=7)  # > t_max


def test_run_report_invariants():
    traj = mixopt.WeightTrajectory()
    traj.append(0, mixopt.uniform_weights(LABELS))
    rep = recipes.RunReport(run_id="r", method="uniform", tau=1.0, seed=0,
                            final_kl=np.float64(0.5), kl_curve=((0, 1.0), (3, 0.5)),
                            weight_trajectory=traj, pi_star=None)
    assert type(rep.final_kl) is float
    with pytest.raises(ContractError):
        recipes.RunReport(run_id="r", method="uniform", tau=1.0, seed=0,
                          final_kl=0.4, kl_curve=((0, 1.0), (3, 0.5)),
                          weight_trajectory=traj, pi_star=None)
    with pytest.raises(ContractError):
        recipes.RunReport(run_id="r", method="uniform", tau=1.0, seed=0,
                          final_kl=0.5, kl_curve=((3, 1.0), (0, 0.5)),
                          weight_trajectory=traj, pi_star=None)
    with pytest.raises(ContractError):
        recipes.RunReport(run_id="r", method="uniform", tau=1.0, seed=0,
                          final_kl=0.5, kl_curve=(), weight_trajectory=traj,
                          pi_star=None)


def test_checkpoint_steps():
    assert recipes.checkpoint_steps(6, 6) == [0, 6]
    assert recipes.checkpoint_steps(6, 3) == [0, 3, 6]
    assert recipes.checkpoint_steps(7, 3) == [0, 3, 6, 7]
    assert recipes.checkpoint_steps(3, 1) == [0, 1, 2, 3]
    with pytest.raises(ContractError):
        recipes.checkpoint_steps(6, 0)
    with pytest.raises(ContractError):
        recipes.checkpoint_steps(6, 7)


def test_eval_text_lls_matches_per_text_scoring(bench):
    # ragged windows: variable chunks force both full and partial contexts
    doms = bench["doms"]
    ev = corpus.build_eval_corpus(doms, texts_per_domain=3, chunk_bytes=96,
                                  rng_seed=41, variable_chunk=(40, 110))
    batched = recipes.eval_text_lls(bench["target"], ev, block=5)
    for i, text in enumerate(ev.texts):
        total, count = tinylm.log_prob(bench["target"], text.tokens)
        assert count == text.tokens.size
        assert batched[i] == pytest.approx(total, rel=1e-10)


def test_first_pass_self_target_is_uniform(bench):
    _, bvec = recipes._snapshot(bench["base"], bench["ev"], True, "self")
    sched = recipes.EstimationSchedule(steps=(0,), t_max=1)
    traj, pi, trained = recipes.first_pass(
        bench["base"], bvec, bench["doms"], bench["ev"], sched, tau=0.05,
        seed=0, settings=bench["st"],
    )
    assert np.array_equal(traj.entries[0][1].values, np.full(K, 0.25))
    # singleton schedule: aggregation is the identity
    assert pi.values == pytest.approx(traj.entries[0][1].values, abs=1e-15)
    assert trained.step == 1


def test_first_pass_trajectory_follows_schedule(bench):
    _, tvec = recipes._snapshot(bench["target"], bench["ev"], True, "t")
    sched = recipes.EstimationSchedule(steps=(0, 2, 4), t_max=6)
    traj, pi, trained = recipes.first_pass(
        bench["base"], tvec, bench["doms"], bench["ev"], sched, tau=0.05,
        seed=1, settings=bench["st"],
    )
    assert traj.steps == [0, 2, 4]
    assert trained.step == 6
    assert pi.K == K
    # adjusted rule runs through the same path
    traj2, _, _ = recipes.first_pass(
        bench["base"], tvec, bench["doms"], bench["ev"], sched, tau=0.05,
        method="adjusted", seed=1, settings=bench["st"],
    )
    assert traj2.steps == [0, 2, 4]
    with pytest.raises(ContractError):
        recipes.first_pass(bench["base"], tvec, bench["doms"], bench["ev"],
                           sched, tau=0.05, method="softmax", settings=bench["st"])


def test_first_pass_rejects_foreign_target(bench):
    ev2 = corpus.build_eval_corpus(bench["doms"], texts_per_domain=4,
                                   chunk_bytes=96, rng_seed=10)
    _, wrong = recipes._snapshot(bench["base"], ev2, True, "w")
    sched = recipes.EstimationSchedule(steps=(0,), t_max=1)
    with pytest.raises(ContractError):
        recipes.first_pass(bench["base"], wrong, bench["doms"], bench["ev"],
                           sched, tau=0.05, settings=bench["st"])
    # normalization flag mismatch is its own failure
    _, unnorm = recipes._snapshot(bench["base"], bench["ev"], False, "u")
    with pytest.raises(ContractError):
        recipes.first_pass(bench["base"], unnorm, bench["doms"], bench["ev"],
                           sched, tau=0.05, settings=bench["st"])
    # corpora order must match eval labels
    _, tvec = recipes._snapshot(bench["base"], bench["ev"], True, "t")
    with pytest.raises(ContractError):
        recipes.first_pass(bench["base"], tvec, bench["doms"][::-1], bench["ev"],
                           sched, tau=0.05, settings=bench["st"])


def test_second_pass_deterministic_and_checkpointed(bench):
    bm = mixopt.uniform_weights(LABELS)
    t1 = recipes.second_pass(bench["base"], bm, bench["doms"], bench["ev"],
                             t_max=6, checkpoint_every=6, seed=2,
                             settings=bench["st"], run_id="x")
    t2 = recipes.second_pass(bench["base"], bm, bench["doms"], bench["ev"],
                             t_max=6, checkpoint_every=6, seed=2,
                             settings=bench["st"], run_id="x")
    assert t1.steps == [0, 6]
    for (s1, v1, r1), (s2, v2, r2) in zip(t1.checkpoints, t2.checkpoints):
        assert s1 == s2
        assert np.array_equal(v1.values, v2.values)
        assert np.array_equal(r1, r2)
    with pytest.raises(ContractError):
        recipes.second_pass(bench["base"], mixopt.uniform_weights(("a", "b", "c", "d")),
                            bench["doms"], bench["ev"], t_max=2, checkpoint_every=1,
                            settings=bench["st"])


def test_uniform_pi_star_reproduces_uniform_baseline(bench):
    cfg_u = _config(run_id="unif", method="uniform")
    rep_u = recipes.run_method(cfg_u, bench["base"], bench["target"],
                               bench["doms"], bench["ev"])
    # manual second pass under explicitly uniform weights, same seed
    traj = recipes.second_pass(bench["base"], mixopt.uniform_weights(LABELS),
                               bench["doms"], bench["ev"], t_max=6,
                               checkpoint_every=3, seed=2, settings=bench["st"],
                               run_id="unif")
    target_row, _ = recipes._snapshot(bench["target"], bench["ev"], True, "target")
    matrix = recipes._run_matrix(traj, bench["ev"], target_row)
    curve = recipes._kl_curve_bits(matrix, "unif", traj.steps, bench["ev"])
    assert curve == rep_u.kl_curve


def test_tau_inf_aggregated_is_bit_identical_to_uniform(bench):
    rep_inf = recipes.run_method(_config(run_id="agg-inf", method="aggregated_lld",
                                         tau=math.inf),
                                 bench["base"], bench["target"], bench["doms"], bench["ev"])
    rep_u = recipes.run_method(_config(run_id="unif", method="uniform"),
                               bench["base"], bench["target"], bench["doms"], bench["ev"])
    assert np.array_equal(rep_inf.pi_star.values, np.full(K, 0.25))
    assert rep_inf.kl_curve == rep_u.kl_curve
    assert rep_inf.final_kl == rep_u.final_kl


def test_uniform_report_shape(bench):
    rep = recipes.run_method(_config(run_id="unif", method="uniform"),
                             bench["base"], bench["target"], bench["doms"], bench["ev"])
    assert rep.kl_units == llspace.BITS_PER_BYTE
    assert [s for s, _ in rep.kl_curve] == [0, 3, 6]
    assert rep.final_kl == rep.kl_curve[-1][1]
    # constant uniform trajectory over the estimation schedule
    assert rep.weight_trajectory.steps == [0, 2, 4]
    assert np.array_equal(rep.weight_trajectory.stacked(), np.full((3, K), 0.25))
    assert np.array_equal(rep.pi_star.values, np.full(K, 0.25))


def test_iterative_and_adjusted_reports(bench):
    for method in ("iterative_lld", "adjusted_lld"):
        rep = recipes.run_method(_config(run_id="it", method=method, tau=0.05),
                                 bench["base"], bench["target"], bench["doms"], bench["ev"])
        assert rep.method == method
        assert [s for s, _ in rep.kl_curve] == [0, 3, 6]
        assert rep.weight_trajectory.steps == [0, 2, 4]
        assert rep.pi_star is not None
        assert all(v >= 0 for _, v in rep.kl_curve)


def test_distill_needs_checkpoint_target(bench):
    _, tvec = recipes._snapshot(bench["target"], bench["ev"], True, "target")
    for method in ("distill_kl", "distill_kl_ce"):
        with pytest.raises(MethodPreconditionError, match="tokenizer"):
            recipes.run_method(_config(run_id="d", method=method),
                               bench["base"], tvec, bench["doms"], bench["ev"])
    rep = recipes.run_method(_config(run_id="d", method="distill_kl"),
                             bench["base"], bench["target"], bench["doms"], bench["ev"])
    assert rep.pi_star is None
    assert np.array_equal(rep.weight_trajectory.stacked(), np.full((3, K), 0.25))


def test_table_target_accepted_in_any_column_order(bench):
    lls, _ = recipes._snapshot(bench["target"], bench["ev"], True, "target")
    perm = np.random.default_rng(3).permutation(bench["ev"].N)
    table = llspace.TextLLMatrix(
        rows=["imported"],
        cols=[bench["ev"].text_ids[i] for i in perm],
        L=lls[perm][None, :],
    )
    rep_table = recipes.run_method(_config(run_id="t", method="iterative_lld", tau=0.05),
                                   bench["base"], table, bench["doms"], bench["ev"])
    rep_ckpt = recipes.run_method(_config(run_id="t", method="iterative_lld", tau=0.05),
                                  bench["base"], bench["target"], bench["doms"], bench["ev"])
    # reordering the table columns must not change anything: the view is
    # re-sorted into eval order before centering
    assert rep_table.kl_curve == rep_ckpt.kl_curve
    two_rows = llspace.TextLLMatrix(rows=["a", "b"], cols=bench["ev"].text_ids,
                                    L=np.vstack([lls, lls + 1.0]))
    with pytest.raises(ContractError):
        recipes.run_method(_config(run_id="t2", method="uniform"),
                           bench["base"], two_rows, bench["doms"], bench["ev"])
    missing = llspace.TextLLMatrix(rows=["a"], cols=bench["ev"].text_ids[:-1],
                                   L=lls[None, :-1])
    with pytest.raises(ContractError):
        recipes.run_method(_config(run_id="t3", method="uniform"),
                           bench["base"], missing, bench["doms"], bench["ev"])


def test_domain_only_target_degrades_to_l2(bench):
    _, tvec = recipes._snapshot(bench["target"], bench["ev"], True, "target")
    rep = recipes.run_method(_config(run_id="l2", method="uniform"),
                             bench["base"], tvec, bench["doms"], bench["ev"])
    assert rep.kl_units == "l2_domain_ll"
    assert rep.final_kl >= 0
    with pytest.raises(ContractError):
        recipes.run_method(_config(run_id="l3", method="uniform"),
                           bench["base"], object(), bench["doms"], bench["ev"])


def test_ground_truth_recovery(bench):
    truth = bench["truth"]
    assert np.array_equal(truth.values, np.array([0.4, 0.2, 0.2, 0.2]))
    kl_self, kl_unif = recipes.ground_truth_recovery(truth, truth)
    assert kl_self == 0.0
    # closed form: sum_k 0.25 ln(0.25 / truth_k)
    expect = 0.25 * math.log(0.25 / 0.4) + 3 * 0.25 * math.log(0.25 / 0.2)
    assert kl_unif == pytest.approx(expect, rel=1e-12)
    with pytest.raises(ContractError):
        recipes.ground_truth_recovery(mixopt.uniform_weights(("a", "b", "c", "d")), truth)


def test_make_skewed_target_truths(bench):
    bm = mixopt.uniform_weights(LABELS)
    _, tr = recipes.make_skewed_target(bm, {}, steps=1, corpora=bench["doms"],
                                       model_config=bench["cfg"], seed=0,
                                       settings=bench["st"])
    assert np.array_equal(tr.values, bm.values)
    with pytest.raises(ContractError):
        recipes.make_skewed_target(bm, {"nope": 2.0}, steps=1, corpora=bench["doms"],
                                   model_config=bench["cfg"], settings=bench["st"])
    with pytest.raises(ContractError):
        recipes.make_skewed_target(bm, {"d0": 0.0}, steps=1, corpora=bench["doms"],
                                   model_config=bench["cfg"], settings=bench["st"])
    with pytest.raises(ContractError):
        recipes.make_skewed_target(bm, {}, steps=0, corpora=bench["doms"],
                                   model_config=bench["cfg"], settings=bench["st"])
    m1, _ = recipes.make_skewed_target(bm, {"d1": 3.0}, steps=2, corpora=bench["doms"],
                                       model_config=bench["cfg"], seed=11,
                                       settings=bench["st"])
    m2, _ = recipes.make_skewed_target(bm, {"d1": 3.0}, steps=2, corpora=bench["doms"],
                                       model_config=bench["cfg"], seed=11,
                                       settings=bench["st"])
    assert np.array_equal(m1.params, m2.params)


def _prune_states(src, dst, keep):
    """Copy a state dir, keeping only files the predicate accepts."""
    import os
    import shutil

    for root, _, files in os.walk(src):
        rel = os.path.relpath(root, src)
        for f in files:
            path = os.path.join(rel, f) if rel != "." else f
            if keep(path, f):
                full = os.path.join(dst, path)
                os.makedirs(os.path.dirname(full) or dst, exist_ok=True)
                shutil.copy(os.path.join(src, path), full)


def _file_step(name):
    return int(name.split("-")[1].split(".")[0])


def test_resume_fixed_weight_pass(tmp_path, bench):
    cfg = _config(run_id="res", method="uniform")
    full_dir = tmp_path / "full"
    full = recipes.run_method_full(cfg, bench["base"], bench["target"],
                                   bench["doms"], bench["ev"], state_dir=str(full_dir))
    rep_full, m_full = full.report, full.model
    # states exist at every checkpoint step plus the end
    assert recipes._saved_state_steps(str(full_dir)) == [0, 3, 6]
    part = tmp_path / "part"
    _prune_states(full_dir, part, lambda p, f: _file_step(f) <= 3)
    res = recipes.run_method_full(cfg, bench["base"], bench["target"],
                                  bench["doms"], bench["ev"],
                                  state_dir=str(part), resume=True)
    rep_res, m_res = res.report, res.model
    assert rep_res.kl_curve == rep_full.kl_curve
    assert np.array_equal(m_res.params, m_full.params)


def test_resume_aggregated_both_phases(tmp_path, bench):
    cfg = _config(run_id="res2", method="aggregated_lld", tau=0.05)
    full_dir = tmp_path / "full"
    full = recipes.run_method_full(cfg, bench["base"], bench["target"],
                                   bench["doms"], bench["ev"], state_dir=str(full_dir))
    rep_full, m_full = full.report, full.model

    def interrupted_first(path, f):
        if path == "pi_star.json" or path.startswith("second"):
            return False
        return _file_step(f) <= 3

    def interrupted_second(path, f):
        if path.startswith("second"):
            return _file_step(f) <= 3
        return True

    for name, keep in (("first", interrupted_first), ("second", interrupted_second)):
        part = tmp_path / name
        _prune_states(full_dir, part, keep)
        res = recipes.run_method_full(cfg, bench["base"], bench["target"],
                                      bench["doms"], bench["ev"],
                                      state_dir=str(part), resume=True)
        rep, m = res.report, res.model
        assert rep.kl_curve == rep_full.kl_curve, name
        assert np.array_equal(m.params, m_full.params), name
        assert np.array_equal(rep.pi_star.values, rep_full.pi_star.values), name
        assert np.array_equal(rep.weight_trajectory.stacked(),
                              rep_full.weight_trajectory.stacked()), name


def test_fixed_weights_override(bench):
    ext = mixopt.DomainWeights(values=np.array([0.7, 0.1, 0.1, 0.1]), labels=LABELS)
    cfg = _config(run_id="fw", method="aggregated_lld")
    rep = recipes.run_method_full(cfg, bench["base"], bench["target"],
                                  bench["doms"], bench["ev"], fixed_weights=ext).report
    assert np.array_equal(rep.pi_star.values, ext.values)
    assert np.array_equal(rep.weight_trajectory.stacked(),
                          np.tile(ext.values, (3, 1)))
    with pytest.raises(ContractError):
        recipes.run_method(_config(run_id="fw2", method="uniform"),
                           bench["base"], bench["target"], bench["doms"], bench["ev"],
                           fixed_weights=ext)
    bad = mixopt.DomainWeights(values=np.full(4, 0.25), labels=("a", "b", "c", "d"))
    with pytest.raises(ContractError):
        recipes.run_method(cfg, bench["base"], bench["target"], bench["doms"],
                           bench["ev"], fixed_weights=bad)


def test_report_round_trip(tmp_path, bench):
    rep = recipes.run_method(_config(run_id="rt", method="aggregated_lld", tau=math.inf),
                             bench["base"], bench["target"], bench["doms"], bench["ev"])
    p = tmp_path / "report.json"
    recipes.write_report(p, rep)
    with pytest.raises(OverwriteError):
        recipes.write_report(p, rep)
    back = recipes.read_report(p)
    assert back.run_id == rep.run_id and back.method == rep.method
    assert math.isinf(back.tau)
    assert back.kl_curve == rep.kl_curve
    assert back.final_kl == rep.final_kl
    assert np.array_equal(back.pi_star.values, rep.pi_star.values)
    assert back.weight_trajectory.steps == rep.weight_trajectory.steps
    assert np.array_equal(back.weight_trajectory.stacked(),
                          rep.weight_trajectory.stacked())
    # wallclock never reaches disk
    assert "wallclock" not in json.loads(p.read_text())


def test_report_bytes_reproducible(tmp_path, bench):
    cfg = _config(run_id="rr", method="iterative_lld", tau=0.05)
    blobs = []
    for i in range(2):
        rep = recipes.run_method(cfg, bench["base"], bench["target"],
                                 bench["doms"], bench["ev"])
        p = tmp_path / f"r{i}.json"
        recipes.write_report(p, rep)
        blobs.append(p.read_bytes())
    assert blobs[0] == blobs[1]


def test_summary_csv(tmp_path, bench):
    rep1 = recipes.run_method(_config(run_id="u1", method="uniform"),
                              bench["base"], bench["target"], bench["doms"], bench["ev"])
    rep2 = recipes.run_method(_config(run_id="a1", method="aggregated_lld", tau=math.inf),
                              bench["base"], bench["target"], bench["doms"], bench["ev"])
    p = tmp_path / "summary.csv"
    recipes.write_summary_csv(p, [rep1, rep2])
    lines = p.read_text().strip().split("\n")
    assert lines[0] == "run_id,method,tau,seed,final_kl_bits_per_byte"
    assert len(lines) == 3
    cells = lines[2].split(",")
    assert cells[:2] == ["a1", "aggregated_lld"]
    assert cells[2] == "inf"
    assert float(cells[4]) == rep2.final_kl
    with pytest.raises(OverwriteError):
        recipes.write_summary_csv(p, [rep1])
