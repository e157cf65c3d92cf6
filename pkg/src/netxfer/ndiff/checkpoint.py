"""JSON checkpoints with bit-exact float64 payloads (base64, little endian)."""
from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any

import numpy as np

from .params import Block, ParamStore

SCHEMA = "checkpoint/1"


def encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def decode_array(data: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(data), dtype="<f8").reshape(shape).astype(np.float64)


def store_to_dict(store: ParamStore) -> dict[str, Any]:
    return {
        p.name: {
            "shape": list(p.value.shape),
            "block": p.block.value,
            "trainable": bool(p.trainable),
            "data": encode_array(p.value),
        }
        for p in store
    }


def store_from_dict(d: dict[str, Any]) -> ParamStore:
    store = ParamStore()
    for name, rec in d.items():
        store.add(name, decode_array(rec["data"], tuple(rec["shape"])), Block(rec["block"]), rec.get("trainable", True))
    return store


def save_checkpoint(path, store: ParamStore, hyperparameters: dict, normalizer: dict | None = None) -> None:
    doc = {
        "schema": SCHEMA,
        "hyperparameters": hyperparameters,
        "normalizer": normalizer,
        "parameters": store_to_dict(store),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_checkpoint(path) -> dict[str, Any]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema')!r}")
    doc["parameters"] = store_from_dict(doc["parameters"])
    return doc
