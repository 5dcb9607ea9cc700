"""Experiment configuration: strict TOML parsing with a stable digest.

Unknown keys are rejected with their full path so typos fail loudly instead
of silently running a different experiment. The digest is computed over the
effective config (after any environment override) and is embedded into every
artifact the CLI writes.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from . import recipes, tinylm
from .corpus import DomainSpec
from .errors import ConfigError

SEED_ENV_VAR = "MIXALIGN_SEED"

_REQUIRED = object()

# leaf spec: (type tag, default). "number" accepts int or float, "tau" also
# accepts the string "inf".
_DOMAIN_SCHEMA = {
    "name": ("str", _REQUIRED),
    "order": ("int", _REQUIRED),
    "transition_seed": ("int", _REQUIRED),
    "alphabet_size": ("int", 256),
    "skew": ("skew", 1.0),
}

_SCHEMA = {
    "output": {
        "dir": ("str", _REQUIRED),
    },
    "corpus": {
        "train_bytes": ("int", _REQUIRED),
        "heldout_fraction": ("number", 0.1),
        "texts_per_domain": ("int", _REQUIRED),
        "chunk_bytes": ("int", _REQUIRED),
        "corpus_seed": ("int", _REQUIRED),
        "eval_seed": ("int", _REQUIRED),
        "domains": ("domain_list", _REQUIRED),
    },
    "model": {
        "vocab": ("int", 256),
        "layers": ("int", _REQUIRED),
        "heads": ("int", _REQUIRED),
        "embed_dim": ("int", _REQUIRED),
        "context_length": ("int", _REQUIRED),
    },
    "schedule": {
        "t_max": ("int", _REQUIRED),
        "late_every": ("int", 200),
        "checkpoint_every": ("int", _REQUIRED),
        "steps": ("int_list", None),
    },
    "train": {
        "windows_per_batch": ("int", 8),
        "window_length": ("int", None),
        "lr_max": ("number", 6e-4),
        "lr_min": ("number", 6e-5),
        "warmup_frac": ("number", 0.1),
        "normalize_ll": ("bool", True),
    },
    "target": {
        "boost": ("factor_table", _REQUIRED),
        "steps": ("int", _REQUIRED),
        "seed": ("int", _REQUIRED),
    },
    "methods": {
        "list": ("str_list", _REQUIRED),
        "tau": ("tau", 1.0),
        "tau_overrides": ("tau_table", None),
    },
    "seeds": {
        "base_init": ("int", _REQUIRED),
        "runs": ("int_list", _REQUIRED),
    },
}


def _check_leaf(kind, value, path):
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {type(value).__name__}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {type(value).__name__}")
        return value
    if kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {type(value).__name__}")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean, got {type(value).__name__}")
        return value
    if kind in ("tau", "skew"):
        if value == "inf":
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number or \"inf\"")
        return float(value)
    if kind == "int_list":
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in value
        ):
            raise ConfigError(f"{path}: expected a list of integers")
        return list(value)
    if kind == "str_list":
        if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
            raise ConfigError(f"{path}: expected a list of strings")
        return list(value)
    if kind == "factor_table":
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table of domain -> factor")
        return {k: _check_leaf("number", v, f"{path}.{k}") for k, v in value.items()}
    if kind == "tau_table":
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table of method -> tau")
        return {k: _check_leaf("tau", v, f"{path}.{k}") for k, v in value.items()}
    if kind == "domain_list":
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{path}: expected a non-empty array of domain tables")
        return [_check_section(_DOMAIN_SCHEMA, v, f"{path}[{i}]")
                for i, v in enumerate(value)]
    raise AssertionError(kind)


def _check_section(schema, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a table")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    out = {}
    for key, (kind, default) in schema.items():
        if key in raw:
            out[key] = _check_leaf(kind, raw[key], f"{path}.{key}")
        elif default is _REQUIRED:
            raise ConfigError(f"{path}.{key}: missing required key")
        else:
            out[key] = default
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description plus its content digest."""

    output_dir: str
    corpus: dict
    model: dict
    schedule: dict
    train: dict
    target: dict
    methods: dict
    seeds: dict
    digest: str
    corpus_digest: str

    def domain_specs(self):
        return [
            DomainSpec(
                name=d["name"], order=d["order"], transition_seed=d["transition_seed"],
                alphabet_size=d["alphabet_size"], skew=d["skew"],
            )
            for d in self.corpus["domains"]
        ]

    def model_config(self) -> tinylm.ModelConfig:
        m = self.model
        return tinylm.ModelConfig(
            vocab=m["vocab"], layers=m["layers"], heads=m["heads"],
            embed_dim=m["embed_dim"], context_length=m["context_length"],
        )

    def estimation_schedule(self) -> recipes.EstimationSchedule:
        s = self.schedule
        if s["steps"] is not None:
            return recipes.EstimationSchedule(steps=tuple(s["steps"]), t_max=s["t_max"])
        return recipes.desk_schedule(s["t_max"], late_every=s["late_every"])

    def train_settings(self) -> recipes.TrainSettings:
        t = self.train
        return recipes.TrainSettings(
            windows_per_batch=t["windows_per_batch"],
            window_length=t["window_length"],
            lr_max=t["lr_max"], lr_min=t["lr_min"],
            warmup_frac=t["warmup_frac"], normalize_ll=t["normalize_ll"],
        )

    def method_taus(self):
        """(method, tau) pairs in config order, overrides applied."""
        overrides = self.methods["tau_overrides"] or {}
        unknown = sorted(set(overrides) - set(recipes.METHODS))
        if unknown:
            raise ConfigError(f"methods.tau_overrides.{unknown[0]}: unknown method")
        return [
            (m, overrides.get(m, self.methods["tau"]))
            for m in self.methods["list"]
        ]


def _canonical(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in sorted(value.items())}
    if isinstance(value, list):
        return [_canonical(v) for v in value]
    return value


def config_digest(sections: dict) -> str:
    payload = json.dumps(_canonical(sections), sort_keys=True).encode()
    return hashlib.blake2b(payload, digest_size=16).hexdigest()


def load_config(path, env=None) -> ExperimentConfig:
    """Parse, validate, and seal a TOML experiment config.

    MIXALIGN_SEED in the environment replaces every training seed (base
    init, target, run list) for cheap smoke runs; corpus seeds stay put
    because they define the dataset artifacts, not the experiment.
    """
    env = os.environ if env is None else env
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")

    unknown = sorted(set(raw) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section")
    sections = {
        name: _check_section(schema, raw.get(name, {}), name)
        for name, schema in _SCHEMA.items()
    }

    if SEED_ENV_VAR in env:
        try:
            override = int(env[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer")
        sections["seeds"]["base_init"] = override
        sections["seeds"]["runs"] = [override]
        sections["target"]["seed"] = override

    names = [d["name"] for d in sections["corpus"]["domains"]]
    if len(set(names)) != len(names):
        raise ConfigError("corpus.domains: duplicate domain names")
    unknown_boost = sorted(set(sections["target"]["boost"]) - set(names))
    if unknown_boost:
        raise ConfigError(f"target.boost.{unknown_boost[0]}: unknown domain")
    for m in sections["methods"]["list"]:
        if m not in recipes.METHODS:
            raise ConfigError(f"methods.list: unknown method {m!r}")
    if not sections["seeds"]["runs"]:
        raise ConfigError("seeds.runs: need at least one run seed")

    cfg = ExperimentConfig(
        output_dir=sections["output"]["dir"],
        corpus=sections["corpus"],
        model=sections["model"],
        schedule=sections["schedule"],
        train=sections["train"],
        target=sections["target"],
        methods=sections["methods"],
        seeds=sections["seeds"],
        digest=config_digest(sections),
        # scoped digest: corpora depend only on their own section, so a seed
        # override for smoke runs must not invalidate generated data
        corpus_digest=config_digest({"corpus": sections["corpus"]}),
    )
    # fail fast on invalid combinations instead of deep inside a run
    cfg.domain_specs()
    cfg.model_config()
    cfg.estimation_schedule()
    cfg.train_settings()
    recipes.checkpoint_steps(cfg.schedule["t_max"], cfg.schedule["checkpoint_every"])
    for m, tau in cfg.method_taus():
        if not tau > 0:
            raise ConfigError(f"methods: tau for {m} must be positive, got {tau}")
    return cfg
