"""Named parameter collections and their text checkpoints.

Parameters are plain ``dict[str, np.ndarray]``. A checkpoint is a JSON
document holding the model config, a fingerprint of that config, and every
tensor's name, shape and row-major values written with 17 significant
digits, which round-trips float64 exactly.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

FORMAT = "tod-reward-checkpoint/1"


class CheckpointError(ValueError):
    """Unreadable checkpoint or one written for a different model config."""


def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def init_uniform(shapes: dict, rng, scale=0.1) -> dict:
    return {name: rng.uniform(-scale, scale, size=shape) for name, shape in shapes.items()}


def zeros_like(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def sgd_update(params: dict, grads: dict, lr: float) -> None:
    for k in params:
        params[k] -= lr * grads[k]


def flatten(tree: dict) -> np.ndarray:
    return np.concatenate([np.ravel(tree[k]) for k in sorted(tree)])


def unflatten(vec, like: dict) -> dict:
    out, i = {}, 0
    for k in sorted(like):
        n = like[k].size
        out[k] = np.asarray(vec[i : i + n], dtype=float).reshape(like[k].shape)
        i += n
    return out


def params_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(
        a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a
    )


def dumps_checkpoint(kind: str, config: dict, params: dict) -> str:
    tensors = [
        {
            "name": name,
            "shape": list(params[name].shape),
            "values": " ".join(f"{x:.17g}" for x in np.ravel(params[name])),
        }
        for name in sorted(params)
    ]
    doc = {"format": FORMAT, "kind": kind, "fingerprint": fingerprint(config), "config": config, "params": tensors}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_checkpoint(path, kind: str, config: dict, params: dict) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_checkpoint(kind, config, params))


def loads_checkpoint(text: str, kind: str | None = None, expected_config: dict | None = None):
    """Parse a checkpoint, returning ``(config, params)``."""
    try:
        doc = json.loads(text)
        if doc.get("format") != FORMAT:
            raise CheckpointError(f"not a checkpoint (format={doc.get('format')!r})")
        config = doc["config"]
        params = {}
        for t in doc["params"]:
            shape = tuple(int(s) for s in t["shape"])
            raw = t["values"].split()
            values = np.array([float(x) for x in raw], dtype=float)
            if values.size != int(np.prod(shape)):
                raise CheckpointError(f"tensor {t['name']!r} has {values.size} values for shape {shape}")
            params[t["name"]] = values.reshape(shape)
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise CheckpointError(f"cannot parse checkpoint: {exc}") from exc
    if kind is not None and doc.get("kind") != kind:
        raise CheckpointError(f"expected a {kind} checkpoint, found {doc.get('kind')!r}")
    if doc.get("fingerprint") != fingerprint(config):
        raise CheckpointError("stored fingerprint does not match the stored config")
    if expected_config is not None and fingerprint(expected_config) != doc["fingerprint"]:
        raise CheckpointError(
            f"config fingerprint mismatch: checkpoint {doc['fingerprint']}, expected {fingerprint(expected_config)}"
        )
    return config, params


def load_checkpoint(path, kind: str | None = None, expected_config: dict | None = None):
    with open(path) as fh:
        return loads_checkpoint(fh.read(), kind, expected_config)
