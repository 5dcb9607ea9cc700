"""Shared helpers: a minimal dict->TOML emitter and the tiny experiment doc."""

import json


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)  # JSON escaping is valid for TOML basic strings
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot emit {type(v).__name__} as TOML")


def toml_dump(doc: dict) -> str:
    out = []

    def walk(name, table):
        out.append(f"[{name}]")
        subtables, arrays = [], []
        for k, v in table.items():
            if isinstance(v, dict):
                subtables.append((f"{name}.{k}", v))
            elif isinstance(v, list) and v and all(isinstance(x, dict) for x in v):
                arrays.append((f"{name}.{k}", v))
            else:
                out.append(f"{k} = {_toml_value(v)}")
        for sub, tab in subtables:
            walk(sub, tab)
        for sub, items in arrays:
            for item in items:
                out.append(f"[[{sub}]]")
                for k, v in item.items():
                    out.append(f"{k} = {_toml_value(v)}")

    for name, table in doc.items():
        walk(name, table)
    return "\n".join(out) + "\n"


def tiny_doc(out_dir) -> dict:
    """Four tiny order-1 domains, a 1-layer model, 6 training steps."""
    return {
        "output": {"dir": str(out_dir)},
        "corpus": {
            "train_bytes": 20000,
            "heldout_fraction": 0.1,
            "texts_per_domain": 4,
            "chunk_bytes": 96,
            "corpus_seed": 5,
            "eval_seed": 9,
            "domains": [
                {"name": f"d{k}", "order": 1, "transition_seed": 20 + k,
                 "alphabet_size": 16, "skew": 0.3}
                for k in range(4)
            ],
        },
        "model": {"vocab": 16, "layers": 1, "heads": 2,
                  "embed_dim": 16, "context_length": 32},
        "schedule": {"t_max": 6, "checkpoint_every": 3, "steps": [0, 2, 4]},
        "train": {"windows_per_batch": 4, "window_length": 32,
                  "lr_max": 6e-4, "lr_min": 6e-5, "warmup_frac": 0.1},
        "target": {"steps": 8, "seed": 7, "boost": {"d0": 2.0}},
        "methods": {"list": ["uniform", "aggregated_lld"], "tau": 0.05},
        "seeds": {"base_init": 3, "runs": [2]},
    }


def write_doc(dir_path, doc, name="exp.toml"):
    path = dir_path / name
    path.write_text(toml_dump(doc))
    return path
