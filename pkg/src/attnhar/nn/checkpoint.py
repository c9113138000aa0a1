"""JSON checkpoint format.

Layout::

    {"format": "attnhar-checkpoint", "version": 1,
     "header": {...architecture config...},
     "parameters": [{"name": ..., "shape": [...], "values": [...]}, ...],
     "buffers":    [{"name": ..., "shape": [...], "values": [...]}, ...]}

Values are written with Python's shortest round-trip float repr, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import Module

FORMAT = "attnhar-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _entries(named) -> list[dict]:
    return [{"name": name, "shape": list(arr.shape), "values": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
            for name, arr in named]


def dumps_checkpoint(module: Module, header: dict) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "header": header,
        "parameters": _entries((n, p.data) for n, p in module.named_parameters()),
        "buffers": _entries(module.named_buffers()),
    }
    return json.dumps(doc, separators=(",", ":"), sort_keys=False) + "\n"


def save_checkpoint(path: str | Path, module: Module, header: dict) -> None:
    Path(path).write_text(dumps_checkpoint(module, header), encoding="utf-8")


def read_checkpoint(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not an {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    return doc


def load_state(module: Module, doc: dict) -> None:
    """Copy parameter and buffer values from a parsed checkpoint into ``module``."""
    params = dict(module.named_parameters())
    stored = {e["name"]: e for e in doc["parameters"]}
    if set(params) != set(stored):
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        raise CheckpointError(f"parameter names differ: missing={missing} unexpected={extra}")
    for name, p in params.items():
        e = stored[name]
        if tuple(e["shape"]) != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {e['shape']} != model shape {list(p.shape)}")
        p.data[...] = np.asarray(e["values"], dtype=np.float64).reshape(p.shape)
        p.zero_grad()
        p.momentum_buf[...] = 0.0

    buffers = {e["name"]: e for e in doc.get("buffers", [])}
    for name, arr in module.named_buffers():
        if name not in buffers:
            raise CheckpointError(f"buffer {name} missing from checkpoint")
        e = buffers[name]
        if tuple(e["shape"]) != arr.shape:
            raise CheckpointError(f"{name}: checkpoint shape {e['shape']} != model shape {list(arr.shape)}")
        arr[...] = np.asarray(e["values"], dtype=np.float64).reshape(arr.shape)
