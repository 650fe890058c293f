"""Manifest-driven feature export.

The bridge talks to downstream tooling only through files: STNS tensors and
JSON-lines manifests. Manifest rows are handled as raw dicts so keys the
bridge does not know about survive the round trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .model import forward, load_checkpoint
from .stns import BridgeError, write_tensor


@dataclass(frozen=True)
class ExportSpec:
    """Which checkpoint to run, which layers to dump, over which manifest."""

    model: str
    layers: tuple
    manifest: str
    out_dir: str

    def __post_init__(self):
        layers = tuple(int(l) for l in self.layers)
        if not layers:
            raise BridgeError("at least one layer must be requested")
        if any(l < 1 for l in layers):
            raise BridgeError("layer indices are 1-based")
        if len(set(layers)) != len(layers):
            raise BridgeError("duplicate layer requested")
        object.__setattr__(self, "layers", layers)


def _read_rows(path) -> list[dict]:
    rows = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BridgeError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(row, dict) or "utterance_id" not in row or "speaker_id" not in row:
                raise BridgeError(f"{path}:{lineno}: rows need utterance_id and speaker_id")
            if row["utterance_id"] in seen:
                raise BridgeError(f"{path}:{lineno}: duplicate utterance_id {row['utterance_id']!r}")
            seen.add(row["utterance_id"])
            rows.append(row)
    return rows


def _read_mono_wav(path):
    p = Path(path)
    if not p.exists():
        raise BridgeError(f"missing audio {p}")
    rate, data = wavfile.read(p)
    data = np.asarray(data)
    if data.ndim != 1:
        raise BridgeError(f"{p}: audio must be mono")
    if data.dtype.kind == "i":
        data = data.astype(np.float64) / float(2 ** (8 * data.dtype.itemsize - 1))
    else:
        data = data.astype(np.float64)
    return int(rate), data


def export_features(spec: ExportSpec):
    """One STNS tensor per (utterance, layer), plus one updated manifest per
    layer whose rows point at the exported features and record the frame rate.

    Returns (written tensor paths, {layer: manifest path}). Re-running with
    the same checkpoint and audio reproduces every output byte (the forward
    pass is deterministic eval).
    """
    ckpt = load_checkpoint(spec.model)
    bad = [l for l in spec.layers if l > ckpt.depth]
    if bad:
        raise BridgeError(f"layer {bad[0]} outside model depth {ckpt.depth}")
    rows = _read_rows(spec.manifest)
    if not rows:
        raise BridgeError(f"{spec.manifest}: empty manifest")
    out_dir = Path(spec.out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    written = []
    by_layer = {l: [] for l in spec.layers}
    for row in rows:
        if not row.get("audio"):
            raise BridgeError(f"utterance {row['utterance_id']}: no audio path")
        rate, samples = _read_mono_wav(row["audio"])
        states = forward(ckpt, samples, rate)
        for l in spec.layers:
            path = feat_dir / f"{row['utterance_id']}.layer{l}.stns"
            write_tensor(states[l], path)
            written.append(path)
            new_row = dict(row)
            new_row["features"] = str(path)
            new_row["frame_rate"] = ckpt.frame_rate
            by_layer[l].append(new_row)
    manifests = {}
    for l in spec.layers:
        mpath = out_dir / f"manifest.layer{l}.jsonl"
        with open(mpath, "w", encoding="utf-8") as fh:
            for row in by_layer[l]:
                fh.write(json.dumps(row) + "\n")
        manifests[l] = mpath
    return written, manifests


def export_alignments(rows) -> list[dict]:
    """Convert (start, end, label) source rows in seconds to sorted manifest
    alignment entries. Bad rows are rejected by index."""
    entries = []
    for i, row in enumerate(rows):
        try:
            start, end, label = row
            start, end, label = float(start), float(end), str(label)
        except (TypeError, ValueError) as exc:
            raise BridgeError(f"alignment row {i}: malformed ({row!r})") from exc
        if not label:
            raise BridgeError(f"alignment row {i}: empty label")
        if start < 0 or end <= start:
            raise BridgeError(
                f"alignment row {i}: requires 0 <= start < end, got [{start}, {end}]")
        entries.append({"start": start, "end": end, "label": label})
    entries.sort(key=lambda e: (e["start"], e["end"]))
    return entries


def load_alignment_file(path) -> list[tuple]:
    """Read start/end/label triples from a comma- or tab-separated file."""
    p = Path(path)
    if not p.exists():
        raise BridgeError(f"alignment file {p} does not exist")
    rows = []
    for line in p.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        sep = "\t" if "\t" in line else ","
        rows.append(tuple(tok.strip() for tok in line.split(sep)))
    return rows
