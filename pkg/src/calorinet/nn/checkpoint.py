"""Versioned JSON checkpoints: model spec, parameters and run metadata.

Floats are written with ``repr`` precision so parameters reload bit-exactly,
and keys are sorted so identical models produce identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import Model

FORMAT = "calorinet-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: Model, meta: dict | None = None) -> None:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "seed": model.seed,
        "spec": model.spec,
        "params": {n: {"shape": list(v.shape), "data": v.astype(np.float64).ravel().tolist()}
                   for n, v in model.get_params().items()},
        "meta": meta or {},
    }
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    tmp.replace(path)


def load_checkpoint(path):
    """Returns ``(model, meta)``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    model = Model(doc["spec"], seed=doc["seed"])
    model.set_params({n: np.array(p["data"], dtype=np.float64).reshape(p["shape"])
                      for n, p in doc["params"].items()})
    return model, doc["meta"]
