"""Bit-exact I/O for audio, tensors, manifests, and alignments.

Formats:
  * WAV     -- RIFF/WAVE, PCM16 (fmt code 1) and float32 (fmt code 3), mono only.
  * STNS    -- little-endian tensor container: magic ``STNS``, u32 version=1,
               u32 dtype code (1 = f32), u32 ndim, ndim u64 dims, then the
               row-major f32 payload.
  * manifest -- JSON lines, one utterance per line.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STNS_MAGIC = b"STNS"
STNS_VERSION = 1
STNS_DTYPE_F32 = 1


class IoError(ValueError):
    """Raised on malformed files or schema violations."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise IoError("waveform must be mono (1-D samples)")
        if self.sample_rate <= 0:
            raise IoError("sample_rate must be positive")
        if samples.size and not np.all(np.isfinite(samples)):
            raise IoError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class FrameFeatures:
    """T x D frame matrix at a fixed frame rate (default 50 fps = 20 ms hop)."""

    data: np.ndarray
    frame_rate: float = 50.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise IoError("features must be a T x D matrix with T, D >= 1")
        if not np.all(np.isfinite(data)):
            raise IoError("features contain non-finite entries")
        if self.frame_rate <= 0:
            raise IoError("frame_rate must be positive")
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    @property
    def duration(self) -> float:
        return self.num_frames / self.frame_rate


@dataclass(frozen=True)
class AlignmentEntry:
    """Reference syllable interval in seconds."""

    start: float
    end: float
    label: str

    def __post_init__(self):
        if not (0.0 <= self.start < self.end):
            raise IoError(f"alignment requires 0 <= start < end, got [{self.start}, {self.end}]")
        if not self.label:
            raise IoError("alignment label must be nonempty")


@dataclass
class UtteranceRecord:
    """One manifest row: id, speaker, and where its audio/features live."""

    utterance_id: str
    speaker_id: str
    audio: str | None = None
    features: str | None = None
    alignments: list[AlignmentEntry] | None = None
    # Overlapping reference entries are legal; the flag just records the fact.
    has_overlapping_alignments: bool = field(default=False, compare=False)


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------


def read_wav(path: str | Path) -> Waveform:
    """Read a mono PCM16 or float32 RIFF/WAVE file, scaled to [-1, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise IoError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos: pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8: pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise IoError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise IoError(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if channels != 1:
        raise IoError(f"{path}: multichannel unsupported ({channels} channels)")
    if audio_format == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise IoError(f"{path}: unsupported encoding (format {audio_format}, {bits} bits)")
    return Waveform(samples=samples, sample_rate=sample_rate)


def write_wav(w: Waveform, path: str | Path, encoding: str = "float32") -> None:
    """Write a mono WAV file; ``encoding`` is ``float32`` or ``pcm16``."""
    if encoding == "pcm16":
        fmt_code, bits = 1, 16
        pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
        payload = pcm.tobytes()
    elif encoding == "float32":
        fmt_code, bits = 3, 32
        payload = w.samples.astype("<f4").tobytes()
    else:
        raise IoError(f"unknown WAV encoding {encoding!r}")
    block_align = bits // 8
    byte_rate = w.sample_rate * block_align
    fmt = struct.pack("<HHIIHH", fmt_code, 1, w.sample_rate, byte_rate, block_align, bits)
    chunks = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(chunks)) + chunks)


# ---------------------------------------------------------------------------
# STNS tensors
# ---------------------------------------------------------------------------


def write_tensor(t: np.ndarray, path: str | Path) -> None:
    """Write an f32 tensor (rank >= 1) in the STNS container format."""
    arr = np.asarray(t)
    if arr.ndim < 1:
        raise IoError("rank must be >= 1")
    if not np.all(np.isfinite(arr)):
        raise IoError("tensor contains non-finite entries")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = STNS_MAGIC + struct.pack("<III", STNS_VERSION, STNS_DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an STNS tensor; the round trip with :func:`write_tensor` is bit-exact."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != STNS_MAGIC:
        raise IoError(f"{path}: bad magic")
    version, dtype_code, ndim = struct.unpack_from("<III", raw, 4)
    if version != STNS_VERSION:
        raise IoError(f"{path}: unsupported version {version}")
    if dtype_code != STNS_DTYPE_F32:
        raise IoError(f"{path}: dtype must be f32 (code {STNS_DTYPE_F32}), got code {dtype_code}")
    if ndim < 1:
        raise IoError(f"{path}: rank must be >= 1")
    head_end = 16 + 8 * ndim
    if len(raw) < head_end:
        raise IoError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", raw, 16)
    count = 1
    for d in dims:
        if d == 0 or d > 2**32:
            raise IoError(f"{path}: bad dimension {d}")
        count *= d
    if count * 4 != len(raw) - head_end:
        raise IoError(f"{path}: payload size mismatch (dimension overflow?)")
    return np.frombuffer(raw[head_end:], dtype="<f4").reshape(dims).copy()


def load_features(path: str | Path, frame_rate: float = 50.0) -> FrameFeatures:
    """Read a 2-D STNS tensor as frame features at the given frame rate."""
    arr = read_tensor(path)
    if arr.ndim != 2:
        raise IoError(f"{path}: features must be 2-D, got rank {arr.ndim}")
    return FrameFeatures(data=arr, frame_rate=frame_rate)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def _parse_alignments(rows, where: str):
    entries = []
    for r in rows:
        entries.append(AlignmentEntry(start=float(r["start"]), end=float(r["end"]), label=str(r["label"])))
    entries.sort(key=lambda e: (e.start, e.end))
    overlapping = any(entries[i].end > entries[i + 1].start + 1e-12 for i in range(len(entries) - 1))
    return entries, overlapping


def read_manifest(path: str | Path) -> list[UtteranceRecord]:
    """Read a JSON-lines manifest, preserving file order.

    Alignment entries are sorted by start time; overlapping entries are kept
    and flagged on the record.
    """
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IoError(f"{path}:{lineno}: malformed JSON line ({exc.msg})") from exc
            uid = str(row["utterance_id"])
            if uid in seen:
                raise IoError(f"{path}:{lineno}: duplicate utterance_id {uid!r}")
            seen.add(uid)
            alignments = None
            overlapping = False
            if row.get("alignments") is not None:
                alignments, overlapping = _parse_alignments(row["alignments"], f"{path}:{lineno}")
            records.append(
                UtteranceRecord(
                    utterance_id=uid,
                    speaker_id=str(row["speaker_id"]),
                    audio=row.get("audio"),
                    features=row.get("features"),
                    alignments=alignments,
                    has_overlapping_alignments=overlapping,
                )
            )
    return records


def write_manifest(records: list[UtteranceRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {
                "utterance_id": rec.utterance_id,
                "speaker_id": rec.speaker_id,
                "audio": rec.audio,
                "features": rec.features,
                "alignments": None
                if rec.alignments is None
                else [{"start": a.start, "end": a.end, "label": a.label} for a in rec.alignments],
            }
            fh.write(json.dumps(row) + "\n")
