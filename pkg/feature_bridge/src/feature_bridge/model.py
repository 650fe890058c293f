"""Checkpoint loading and the deterministic eval-mode forward pass.

A checkpoint is a spectrogram front end plus a stack of square tanh layers,
stored as an .npz with a JSON ``meta`` entry. Layer l of the forward pass is
the l-th stack output (1-based); index 0 is the front-end projection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .stns import BridgeError

_LOG_FLOOR = 1e-6


@dataclass(frozen=True)
class Checkpoint:
    sample_rate: int
    n_fft: int
    hop: int
    front_w: np.ndarray
    front_b: np.ndarray
    layers: tuple  # ((w, b), ...) applied in order

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def hidden(self) -> int:
        return int(self.front_w.shape[1])

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop


def random_checkpoint(hidden: int = 16, n_layers: int = 3, seed: int = 0,
                      sample_rate: int = 16000, n_fft: int = 400,
                      hop: int = 320) -> Checkpoint:
    """Deterministic randomly initialized checkpoint for tests and demos."""
    rng = np.random.default_rng(seed)
    n_bins = n_fft // 2 + 1
    front_w = (rng.normal(size=(n_bins, hidden)) / np.sqrt(n_bins)).astype(np.float32)
    layers = tuple(
        ((rng.normal(size=(hidden, hidden)) / np.sqrt(hidden)).astype(np.float32),
         np.zeros(hidden, dtype=np.float32))
        for _ in range(n_layers))
    return Checkpoint(sample_rate=sample_rate, n_fft=n_fft, hop=hop,
                      front_w=front_w, front_b=np.zeros(hidden, dtype=np.float32),
                      layers=layers)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = json.dumps({"sample_rate": ckpt.sample_rate, "n_fft": ckpt.n_fft,
                       "hop": ckpt.hop, "hidden": ckpt.hidden,
                       "n_layers": ckpt.depth})
    arrays = {"front_w": ckpt.front_w, "front_b": ckpt.front_b}
    for i, (w, b) in enumerate(ckpt.layers, start=1):
        arrays[f"layer{i}_w"] = w
        arrays[f"layer{i}_b"] = b
    np.savez(path, meta=meta, **arrays)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise BridgeError(f"checkpoint {path} does not exist")
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            front_w = z["front_w"]
            front_b = z["front_b"]
            layers = tuple((z[f"layer{i}_w"], z[f"layer{i}_b"])
                           for i in range(1, int(meta["n_layers"]) + 1))
    except (KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        raise BridgeError(f"checkpoint {path} is malformed: {exc}") from exc
    ckpt = Checkpoint(sample_rate=int(meta["sample_rate"]), n_fft=int(meta["n_fft"]),
                      hop=int(meta["hop"]), front_w=front_w, front_b=front_b,
                      layers=layers)
    if (ckpt.front_w.ndim != 2 or ckpt.hidden != int(meta["hidden"])
            or ckpt.front_b.shape != (ckpt.hidden,)
            or any(w.shape != (ckpt.hidden, ckpt.hidden) or b.shape != (ckpt.hidden,)
                   for w, b in layers)):
        raise BridgeError(f"checkpoint {path} mismatch: declared sizes do not match arrays")
    return ckpt


def forward(ckpt: Checkpoint, samples: np.ndarray, sample_rate: int) -> list[np.ndarray]:
    """All layer outputs for one mono waveform, index 0 through depth."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise BridgeError("audio must be mono")
    if sample_rate != ckpt.sample_rate:
        raise BridgeError(f"audio at {sample_rate} Hz, checkpoint expects {ckpt.sample_rate} Hz")
    if x.size < ckpt.n_fft:
        raise BridgeError(f"audio shorter than one analysis window ({ckpt.n_fft} samples)")
    n_frames = 1 + (x.size - ckpt.n_fft) // ckpt.hop
    idx = np.arange(ckpt.n_fft)[None, :] + ckpt.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(ckpt.n_fft)
    mag = np.abs(np.fft.rfft(frames, axis=1))
    states = [np.log(mag + _LOG_FLOOR) @ ckpt.front_w + ckpt.front_b]
    for w, b in ckpt.layers:
        states.append(np.tanh(states[-1] @ w + b))
    return states
