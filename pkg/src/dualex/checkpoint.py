"""JSON checkpoint layout shared by the autoencoder and GNN.

::

    {"format": "dualex-checkpoint", "version": 1, "model": "<autoencoder|gnn>",
     "meta": {...},                                  # kind, seed, epochs, lr, ...
     "history": [...],                               # per-epoch loss or accuracy
     "params": {"<name>": {"shape": [r, c], "dtype": "<f8",
                           "data": "<base64 of row-major little-endian float64>"}}}

Keys are sorted and floats are stored as raw bytes, so identical models give
byte-identical files.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any, Union

import numpy as np

FORMAT_NAME = "dualex-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_array(a: np.ndarray) -> dict[str, Any]:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode()}


def decode_array(doc: dict[str, Any]) -> np.ndarray:
    if doc.get("dtype") != "<f8":
        raise CheckpointError(f"unsupported dtype {doc.get('dtype')!r}")
    raw = base64.b64decode(doc["data"])
    shape = tuple(doc["shape"])
    a = np.frombuffer(raw, dtype="<f8")
    if a.size != int(np.prod(shape)):
        raise CheckpointError(f"array data does not fit shape {shape}")
    return a.reshape(shape).astype(np.float64)


def dumps(model: str, meta: dict[str, Any], history: list[float],
          params: dict[str, np.ndarray]) -> bytes:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "model": model,
        "meta": meta,
        "history": [float(h) for h in history],
        "params": {k: encode_array(v) for k, v in params.items()},
    }
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode()


def loads(data: Union[bytes, str], model: str) -> tuple[dict[str, Any], list[float], dict[str, np.ndarray]]:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
        raise CheckpointError("not a dualex checkpoint")
    if doc.get("model") != model:
        raise CheckpointError(f"checkpoint holds a {doc.get('model')!r} model, expected {model!r}")
    params = {k: decode_array(v) for k, v in doc["params"].items()}
    return doc["meta"], list(doc["history"]), params


def save(path: Union[str, Path], payload: bytes) -> None:
    Path(path).write_bytes(payload)
