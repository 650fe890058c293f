"""Checkpointing for parameter stores.

A checkpoint is a directory: one tensor file per parameter plus an
index.json recording step count, names, and role flags.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..io import IoError, read_tensor, write_tensor
from .layers import ParamStore

_INDEX_NAME = "index.json"


def save_checkpoint(path: str | Path, stores: dict[str, ParamStore],
                    step: int) -> None:
    """Write every store under its role name ("student", "teacher", ...)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    index = {"version": 1, "step": int(step), "stores": {}}
    for role, store in stores.items():
        entries = []
        for i, (name, p) in enumerate(store.items()):
            fname = f"{role}.{i:04d}.stns"
            write_tensor(p.data.astype(np.float32, copy=False), root / fname)
            entries.append({
                "name": name,
                "file": fname,
                "trainable": p.trainable,
                "reinitialized": p.reinitialized,
            })
        index["stores"][role] = entries
    (root / _INDEX_NAME).write_text(json.dumps(index, indent=1))


def load_checkpoint(path: str | Path) -> tuple[dict[str, ParamStore], int]:
    root = Path(path)
    index_path = root / _INDEX_NAME
    if not index_path.is_file():
        raise IoError(f"no checkpoint index at {index_path}")
    index = json.loads(index_path.read_text())
    if index.get("version") != 1:
        raise IoError(f"unsupported checkpoint version: {index.get('version')}")
    stores: dict[str, ParamStore] = {}
    for role, entries in index["stores"].items():
        store = ParamStore()
        for e in entries:
            data = read_tensor(root / e["file"])
            store.add(e["name"], data, e["trainable"], e["reinitialized"])
        stores[role] = store
    return stores, int(index["step"])
