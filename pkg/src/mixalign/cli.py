"""Command-line surface: corpora, targets, estimation, training, comparison, plots.

Every subcommand is config-driven and deterministic; artifacts embed the
config digest and seed set so any file can be traced back to the experiment
that produced it. Exit codes: 0 ok, 2 config/contract, 3 would-overwrite,
4 method precondition.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import corpus as corpus_mod
from . import llspace, mixopt, plots, recipes, tinylm, verify
from .errors import (
    ConfigError,
    ContractError,
    InputError,
    MethodPreconditionError,
    MixAlignError,
    OverwriteError,
)
from .tinylm.checkpoint import CHECKPOINT_MAGIC

EXIT_OK = 0
EXIT_CONTRACT = 2
EXIT_OVERWRITE = 3
EXIT_PRECONDITION = 4

PLOT_KINDS = ("kl_curve", "weight_bars", "model_map", "jsd_heatmap", "gram_heatmap")

# estimate's --method names the weight rule driving the first pass
ESTIMATE_METHODS = ("aggregated", "adjusted", "uniform")

_Y_LABELS = {
    llspace.BITS_PER_BYTE: "KL to target (bits/byte)",
    "l2_domain_ll": "L2 distance to target (domain LL)",
}


@dataclass(frozen=True)
class PlotSpec:
    """What to draw, from which files, into which SVG."""

    kind: str
    inputs: tuple
    out: str

    def __post_init__(self):
        if self.kind not in PLOT_KINDS:
            raise ContractError(f"unknown plot kind {self.kind!r}, expected one of {PLOT_KINDS}")
        object.__setattr__(self, "inputs", tuple(str(p) for p in self.inputs))
        if not self.inputs:
            raise ContractError("plot needs at least one input file")
        for p in self.inputs:
            if not Path(p).is_file():
                raise InputError(f"plot input not found: {p}")


def _workspace(cfg) -> Path:
    return Path(cfg.output_dir)


def _corpora_dir(cfg) -> Path:
    return _workspace(cfg) / "corpora"


def _seed_set(cfg) -> dict:
    return {
        "base_init": cfg.seeds["base_init"],
        "runs": list(cfg.seeds["runs"]),
        "target": cfg.target["seed"],
    }


def _provenance(cfg) -> dict:
    return {"config_digest": cfg.digest, "seed_set": _seed_set(cfg)}


def _provenance_note(extras) -> str:
    """Compact one-line provenance for SVG comments; sorted for stable bytes."""
    digests = sorted({e.get("config_digest", "") for e in extras} - {""})
    seeds = sorted({json.dumps(e["seed_set"], sort_keys=True)
                    for e in extras if e.get("seed_set") is not None})
    return f"config_digest={','.join(digests)} seed_set={';'.join(seeds)}"


def _load_world(cfg):
    """Corpora plus eval set from the workspace, checked against the config."""
    cdir = _corpora_dir(cfg)
    manifest_path = cdir / "manifest.json"
    if not manifest_path.is_file():
        raise InputError(f"{manifest_path} not found; run gen-corpus first")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("config_digest") != cfg.corpus_digest:
        raise ContractError(
            "corpus manifest was generated from a different [corpus] section; "
            "rerun gen-corpus (with --force) or restore the matching config"
        )
    corpora = corpus_mod.read_corpus_dir(cdir)
    eval_corpus = corpus_mod.read_eval_corpus(cdir, corpora)
    return corpora, eval_corpus


def checkpoint_digest(ckpt) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(ckpt.config_hash.encode())
    h.update(str(ckpt.step).encode())
    h.update(np.ascontiguousarray(ckpt.params, dtype="<f8").tobytes())
    return h.hexdigest()


def _load_target(path):
    """Target checkpoint or exported LL table, sniffed by file magic.

    Returns (target, kind, digest); recipes accept either form, so the CLI
    only needs to know which digest to stamp into provenance.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"target file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == CHECKPOINT_MAGIC:
        ckpt = tinylm.load_checkpoint(path)
        return ckpt, "checkpoint", checkpoint_digest(ckpt)
    matrix = llspace.read_ll_table(path)
    return matrix, "ll_table", matrix.digest()


def _refuse_overwrite(path, force: bool, hint: str = "pass --force to overwrite"):
    if Path(path).exists() and not force:
        raise OverwriteError(f"{path} exists; {hint}")


def _write_json(path, payload: dict):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a JSON file ({exc})")


def cmd_gen_corpus(args) -> int:
    cfg = config_mod.load_config(args.config)
    cdir = _corpora_dir(cfg)
    _refuse_overwrite(cdir / "manifest.json", args.force)
    sec = cfg.corpus
    corpora = [
        corpus_mod.generate_domain(spec, sec["train_bytes"], sec["corpus_seed"],
                                   sec["heldout_fraction"])
        for spec in cfg.domain_specs()
    ]
    eval_corpus = corpus_mod.build_eval_corpus(
        corpora, sec["texts_per_domain"], sec["chunk_bytes"], sec["eval_seed"]
    )
    manifest_path = corpus_mod.write_corpus_dir(
        cdir, corpora,
        config_digest=cfg.corpus_digest,
        seeds={"corpus_seed": sec["corpus_seed"], "eval_seed": sec["eval_seed"]},
        force=args.force,
    )
    corpus_mod.write_eval_manifest(cdir, eval_corpus, force=args.force)
    digest = hashlib.blake2b(manifest_path.read_bytes(), digest_size=16).hexdigest()
    print(f"wrote {len(corpora)} domains and {eval_corpus.N} eval texts to {cdir}")
    print(f"manifest digest {digest}")
    return EXIT_OK


def cmd_train_target(args) -> int:
    cfg = config_mod.load_config(args.config)
    ws = _workspace(cfg)
    base_path, target_path = ws / "base.mxk", ws / "target.mxk"
    truth_path = ws / "truth.json"
    for p in (base_path, target_path, truth_path):
        _refuse_overwrite(p, args.force)
    corpora, eval_corpus = _load_world(cfg)
    model_cfg = cfg.model_config()
    base = tinylm.init_model(model_cfg, cfg.seeds["base_init"])
    base_mixture = mixopt.uniform_weights(eval_corpus.labels)
    target, truth = recipes.make_skewed_target(
        base_mixture, cfg.target["boost"], cfg.target["steps"], corpora,
        model_cfg, seed=cfg.target["seed"], settings=cfg.train_settings(),
    )
    tinylm.save_checkpoint(base_path, base, force=True)
    tinylm.save_checkpoint(target_path, target, force=True)
    _write_json(truth_path, {
        "labels": list(truth.labels),
        "values": truth.values.tolist(),
        "boost": dict(cfg.target["boost"]),
        "target_steps": cfg.target["steps"],
        "target_digest": checkpoint_digest(target),
        **_provenance(cfg),
    })
    shares = ", ".join(f"{n}={v:.4f}" for n, v in zip(truth.labels, truth.values))
    print(f"base {base_path} (seed {cfg.seeds['base_init']}), "
          f"target {target_path} ({cfg.target['steps']} steps)")
    print(f"truth mixture: {shares}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = config_mod.load_config(args.config)
    corpora, eval_corpus = _load_world(cfg)
    base = tinylm.load_checkpoint(args.base)
    target, target_kind, target_digest = _load_target(args.target)
    settings = cfg.train_settings()
    schedule = cfg.estimation_schedule()
    tau = args.tau if args.tau is not None else cfg.methods["tau"]
    seed = args.seed if args.seed is not None else cfg.seeds["runs"][0]
    out = Path(args.out) if args.out else _workspace(cfg) / "estimates" / args.method
    _refuse_overwrite(out / "weights.json", args.force)

    if args.method == "uniform":
        pi_star = mixopt.uniform_weights(eval_corpus.labels)
        traj = mixopt.WeightTrajectory()
        for s in schedule.steps:
            traj.append(s, pi_star)
        file_method, rule = "uniform", "uniform"
    else:
        rule = "raw" if args.method == "aggregated" else "adjusted"
        _, target_vec = recipes.target_views(target, eval_corpus, settings.normalize_ll)
        traj, pi_star, _ = recipes.first_pass(
            base, target_vec, corpora, eval_corpus, schedule, tau,
            method=rule, seed=seed, settings=settings,
        )
        file_method = "aggregated"

    extra = {
        **_provenance(cfg),
        "rule": rule,
        "seed": seed,
        "eval_digest": eval_corpus.digest(),
        "target_digest": target_digest,
        "target_kind": target_kind,
    }
    out.mkdir(parents=True, exist_ok=True)
    mixopt.write_weights(out / "weights.json", pi_star, tau, file_method,
                         traj.steps, force=True, extra=extra)
    _write_json(out / "trajectory.json", {
        "labels": list(eval_corpus.labels),
        "tau": "inf" if np.isinf(tau) else tau,
        "entries": [[s, w.values.tolist()] for s, w in traj.entries],
        **extra,
    })
    note = _provenance_note([extra])
    bars = [(args.method, pi_star.values),
            ("uniform", mixopt.uniform_weights(eval_corpus.labels).values)]
    svg = plots.svg_weight_bars(bars, list(eval_corpus.labels),
                                title="estimated mixture", provenance=note)
    (out / "weight_bars.svg").write_text(svg)
    if args.method == "adjusted":
        gram = mixopt.gram_matrix(base, eval_corpus, normalize=settings.normalize_ll)
        # zero diff solves to uniform weights; only the stabilized ridge matters
        _, tilde = mixopt.adjusted_lld_weights(np.zeros(gram.K), gram, tau=1.0)
        _write_json(out / "gram.json", {
            "labels": list(eval_corpus.labels),
            "gram": gram.gram.tolist(),
            "ridge": tilde.ridge_used,
            "model_step": gram.model_step,
            "normalized": gram.normalized,
            **extra,
        })
    shares = ", ".join(f"{n}={v:.4f}" for n, v in zip(pi_star.labels, pi_star.values))
    print(f"{args.method} weights: {shares}")
    print(f"wrote {out / 'weights.json'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = config_mod.load_config(args.config)
    corpora, eval_corpus = _load_world(cfg)
    base = tinylm.load_checkpoint(args.base)
    target, target_kind, target_digest = _load_target(args.target)

    fixed = None
    if args.weights and args.method:
        raise ConfigError("pass --weights or --method, not both")
    if args.weights:
        fixed, meta = mixopt.read_weights(args.weights)
        method = recipes.METHOD_AGGREGATED
        tau = meta["tau"]
    elif args.method:
        method = args.method
        tau = dict(cfg.method_taus()).get(method, cfg.methods["tau"])
    else:
        raise ConfigError("one of --weights or --method is required")
    if args.tau is not None:
        tau = args.tau
    if (method in recipes.DISTILL_METHODS
            and isinstance(target, tinylm.ModelCheckpoint)
            and target.config.vocab != base.config.vocab):
        raise MethodPreconditionError(
            f"teacher vocab {target.config.vocab} differs from student vocab "
            f"{base.config.vocab}; distillation requires a shared tokenizer"
        )

    seed = args.seed if args.seed is not None else cfg.seeds["runs"][0]
    schedule = cfg.estimation_schedule()
    checkpoint_every = cfg.schedule["checkpoint_every"]
    if args.steps is not None:
        schedule = recipes.desk_schedule(args.steps, cfg.schedule["late_every"])
        checkpoint_every = min(checkpoint_every, args.steps)
    run_id = args.run_id or f"{method}-s{seed}"
    out = Path(args.out) if args.out else _workspace(cfg) / "runs" / run_id
    if not args.resume:
        _refuse_overwrite(out / "report.json", args.force,
                          hint="pass --force to overwrite or --resume to continue")

    rc = recipes.RunConfig(
        run_id=run_id, method=method, tau=tau, schedule=schedule,
        model=base.config, settings=cfg.train_settings(), seed=seed,
        checkpoint_every=checkpoint_every,
    )
    result = recipes.run_method_full(
        rc, base, target, corpora, eval_corpus,
        fixed_weights=fixed, state_dir=str(out / "states"), resume=args.resume,
    )
    rep = result.report
    extra = {
        **_provenance(cfg),
        "eval_digest": eval_corpus.digest(),
        "target_digest": target_digest,
        "target_kind": target_kind,
    }
    recipes.write_report(out / "report.json", rep, force=True, extra=extra)
    llspace.write_ll_table(out / "ll_table.csv", result.ll_matrix)
    # states/ carries the resume snapshots; the product checkpoint drops the
    # sampler state so fresh and resumed runs emit identical bytes
    tinylm.save_checkpoint(out / "final.mxk", result.model.replace(rng_state=None),
                           force=True)
    # measured, so kept out of the reproducible report file
    _write_json(out / "timing.json", {"wallclock_seconds": rep.wallclock})
    print(f"{run_id}: method={method} final {rep.kl_units}={rep.final_kl:.6f} "
          f"({len(rep.kl_curve)} checkpoints, {rep.wallclock:.1f}s)")
    print(f"wrote {out / 'report.json'}")
    return EXIT_OK


# expected orderings among per-method median final KLs; (a, b, strict)
# reads "a beats (or ties) b"
_EXPECTED_ORDER = (
    (recipes.METHOD_ADJUSTED, recipes.METHOD_ITERATIVE, False),
    (recipes.METHOD_AGGREGATED, recipes.METHOD_UNIFORM, True),
    (recipes.METHOD_DISTILL_KL, recipes.METHOD_AGGREGATED, True),
    (recipes.METHOD_DISTILL_KL_CE, recipes.METHOD_DISTILL_KL, False),
)


def _verdict_lines(reports) -> list:
    if len({tuple(r.kl_curve) for r in reports}) == 1:
        return ["verdict: tie (identical KL curves)"]
    by_method = {}
    for r in reports:
        by_method.setdefault(r.method, []).append(r.final_kl)
    med = {m: float(np.median(v)) for m, v in by_method.items()}
    lines, ok = [], True
    for a, b, strict in _EXPECTED_ORDER:
        if a not in med or b not in med:
            continue
        holds = med[a] < med[b] or (not strict and med[a] == med[b])
        ok = ok and holds
        op = "<" if strict else "<="
        lines.append(f"{'ok' if holds else 'violated'}: {a} {op} {b} "
                     f"(median {med[a]:.6f} vs {med[b]:.6f})")
    if not lines:
        return ["verdict: pass (no expected orderings applicable)"]
    ranking = ", ".join(f"{m}={med[m]:.6f}" for m in sorted(med, key=med.get))
    return [f"verdict: {'pass' if ok else 'FAIL'}"] + lines + [f"ranking: {ranking}"]


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise ContractError("compare needs at least two report files")
    reports, envelopes = [], []
    for p in args.reports:
        env = _read_json(p)
        if "kl_curve" not in env:
            raise InputError(f"{p}: not a run report (no kl_curve)")
        envelopes.append(env)
        reports.append(recipes.read_report(p))
    for key in ("eval_digest", "target_digest"):
        missing = [p for p, e in zip(args.reports, envelopes) if not e.get(key)]
        if missing:
            raise ContractError(f"{missing[0]}: report lacks {key}; regenerate it with the train command")
        if len({e[key] for e in envelopes}) > 1:
            raise ContractError(
                f"reports disagree on {key}; runs were scored against different targets or eval sets"
            )
    units = {r.kl_units for r in reports}
    if len(units) > 1:
        raise ContractError(f"reports mix KL units {sorted(units)}; curves are not comparable")

    out = Path(args.out)
    _refuse_overwrite(out / "summary.csv", args.force)
    out.mkdir(parents=True, exist_ok=True)
    recipes.write_summary_csv(out / "summary.csv", reports, force=True)
    note = _provenance_note(envelopes)
    curves = [(r.run_id, list(r.kl_curve)) for r in reports]
    svg = plots.svg_kl_curves(curves, _Y_LABELS[units.pop()],
                              title="distance to target over training", provenance=note)
    (out / "kl_curves.svg").write_text(svg)
    lines = _verdict_lines(reports)
    (out / "verdict.txt").write_text("\n".join(lines + [note]) + "\n")
    for line in lines:
        print(line)
    print(f"wrote {out / 'summary.csv'}")
    return EXIT_OK


def _load_report_file(path):
    env = _read_json(path)
    if "kl_curve" not in env:
        raise InputError(f"{path}: not a run report (no kl_curve)")
    return recipes.read_report(path), env


def _dedupe(labels) -> list:
    seen, out = {}, []
    for lab in labels:
        n = seen.get(lab, 0)
        seen[lab] = n + 1
        out.append(lab if n == 0 else f"{lab}#{n + 1}")
    return out


def _render_kl_curve(spec: PlotSpec) -> str:
    loaded = [_load_report_file(p) for p in spec.inputs]
    units = {rep.kl_units for rep, _ in loaded}
    if len(units) > 1:
        raise ContractError(f"reports mix KL units {sorted(units)}")
    curves = [(lab, list(rep.kl_curve)) for lab, (rep, _) in
              zip(_dedupe([rep.run_id for rep, _ in loaded]), loaded)]
    return plots.svg_kl_curves(curves, _Y_LABELS[units.pop()],
                               title="distance to target over training",
                               provenance=_provenance_note([e for _, e in loaded]))


def _render_weight_bars(spec: PlotSpec) -> str:
    series, labels, envs = [], None, []
    names = []
    for p in spec.inputs:
        raw = _read_json(p)
        if "values" in raw and "method" in raw:
            w, meta = mixopt.read_weights(p)
            names.append(raw.get("rule", meta["method"]))
            values, file_labels = w.values, w.labels
        elif "pi_star" in raw:
            rep, raw = _load_report_file(p)
            if rep.pi_star is None:
                raise ContractError(f"{p}: report carries no estimated mixture")
            names.append(rep.run_id)
            values, file_labels = rep.pi_star.values, rep.pi_star.labels
        else:
            raise InputError(f"{p}: neither a weights file nor a run report")
        if labels is None:
            labels = tuple(file_labels)
        elif tuple(file_labels) != labels:
            raise ContractError(f"{p}: domain labels differ across inputs")
        series.append(values)
        envs.append(raw)
    named = list(zip(_dedupe(names), series))
    return plots.svg_weight_bars(named, list(labels), title="domain mixture weights",
                                 provenance=_provenance_note(envs))


def _render_model_map(spec: PlotSpec) -> str:
    matrices = [llspace.read_ll_table(p) for p in spec.inputs]
    cols = matrices[0].cols
    rows, blocks = [], []
    for p, m in zip(spec.inputs, matrices):
        if set(m.cols) != set(cols):
            raise ContractError(f"{p}: LL table covers a different text set")
        order = [m.cols.index(c) for c in cols]
        for i, rid in enumerate(m.rows):
            block = m.L[i, order]
            if rid in rows:
                # the shared target row repeats across run tables
                if not np.array_equal(block, blocks[rows.index(rid)]):
                    raise ContractError(f"{p}: conflicting rows for model id {rid!r}")
                continue
            rows.append(rid)
            blocks.append(block)
    joint = llspace.TextLLMatrix(rows=rows, cols=list(cols), L=np.stack(blocks))
    proj = llspace.pca_project(llspace.double_center(joint))
    return plots.svg_model_map(proj.coords, proj.rows, title="model map (LL-space PCA)",
                               provenance=f"ll_digest={joint.digest()}",
                               explained=proj.explained)


def _render_jsd_heatmap(spec: PlotSpec) -> str:
    if len(spec.inputs) != 1:
        raise ContractError("jsd_heatmap takes exactly one run report")
    rep, env = _load_report_file(spec.inputs[0])
    entries = rep.weight_trajectory.entries
    if not entries:
        raise ContractError(f"{spec.inputs[0]}: report carries no weight trajectory")
    T = len(entries)
    M = np.zeros((T, T))
    for i in range(T):
        for j in range(i + 1, T):
            M[i, j] = M[j, i] = mixopt.jsd(entries[i][1], entries[j][1])
    ticks = [f"t={s}" for s, _ in entries]
    return plots.svg_heatmap(M, ticks, ticks,
                             title=f"pairwise JSD of weight estimates ({rep.run_id})",
                             provenance=_provenance_note([env]))


def _render_gram_heatmap(spec: PlotSpec) -> str:
    if len(spec.inputs) != 1:
        raise ContractError("gram_heatmap takes exactly one gram file")
    raw = _read_json(spec.inputs[0])
    for key in ("gram", "labels", "ridge"):
        if key not in raw:
            raise InputError(f"{spec.inputs[0]}: not a gram file (no {key})")
    G = np.asarray(raw["gram"], dtype=np.float64)
    labels = list(raw["labels"])
    if G.shape != (len(labels), len(labels)):
        raise ContractError(f"{spec.inputs[0]}: gram shape {G.shape} does not match labels")
    inv = np.linalg.inv(G + float(raw["ridge"]) * np.eye(len(labels)))
    return plots.svg_heatmap(np.abs(inv), labels, labels,
                             title="abs inverse of ridged gram",
                             provenance=_provenance_note([raw]))


_RENDERERS = {
    "kl_curve": _render_kl_curve,
    "weight_bars": _render_weight_bars,
    "model_map": _render_model_map,
    "jsd_heatmap": _render_jsd_heatmap,
    "gram_heatmap": _render_gram_heatmap,
}


def render_plot(spec: PlotSpec) -> str:
    return _RENDERERS[spec.kind](spec)


def cmd_plot(args) -> int:
    spec = PlotSpec(kind=args.kind, inputs=tuple(args.inputs), out=args.out)
    _refuse_overwrite(spec.out, args.force)
    svg = render_plot(spec)
    Path(spec.out).parent.mkdir(parents=True, exist_ok=True)
    Path(spec.out).write_text(svg)
    print(f"wrote {spec.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if verify.run_all():
        return EXIT_OK
    print("error: verification failed", file=sys.stderr)
    return EXIT_CONTRACT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixalign",
        description="design domain mixtures that align a base LM with a target in LL space",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-corpus", help="generate domain corpora and the eval set")
    p.add_argument("--config", required=True, help="experiment TOML")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-target", help="initialize the base model and train the skewed target")
    p.add_argument("--config", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train_target)

    p = sub.add_parser("estimate", help="first pass: estimate mixture weights against a target")
    p.add_argument("--config", required=True)
    p.add_argument("--base", required=True, help="base model checkpoint")
    p.add_argument("--target", required=True, help="target checkpoint or exported LL table")
    p.add_argument("--method", choices=ESTIMATE_METHODS, default="aggregated")
    p.add_argument("--tau", type=float, help="softmax temperature; 'inf' gives uniform weights")
    p.add_argument("--seed", type=int, help="override the first run seed")
    p.add_argument("--out", help="output directory (default <output.dir>/estimates/<method>)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("train", help="train one run end to end and write its report")
    p.add_argument("--config", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--method", choices=recipes.METHODS,
                   help="training method (or pass --weights)")
    p.add_argument("--weights", help="weights JSON from a prior estimate; implies aggregated_lld")
    p.add_argument("--steps", type=int, help="override schedule.t_max")
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--run-id", help="default <method>-s<seed>")
    p.add_argument("--out", help="run directory (default <output.dir>/runs/<run_id>)")
    p.add_argument("--resume", action="store_true",
                   help="continue bit-exactly from the last saved state")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="consolidate run reports into a summary and verdict")
    p.add_argument("reports", nargs="+", help="report JSON files (at least two)")
    p.add_argument("--out", required=True, help="comparison output directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="render a deterministic SVG from run artifacts")
    p.add_argument("inputs", nargs="+", help="input files; meaning depends on --kind")
    p.add_argument("--kind", required=True, choices=PLOT_KINDS)
    p.add_argument("--out", required=True, help="output SVG path")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("verify", help="run the built-in oracle and property checks")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OverwriteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OVERWRITE
    except MethodPreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except MixAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
