"""Audio, tensor, and manifest round-trips plus their declared error cases."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays, array_shapes

from syllabion.io import (AlignmentEntry, FrameFeatures, IoError, Waveform,
                          load_features, read_manifest, read_tensor, read_wav,
                          write_manifest, write_tensor, write_wav,
                          UtteranceRecord)

from conftest import make_sine


# -- domain type invariants ------------------------------------------------------


def test_waveform_rejects_stereo_and_nonfinite():
    with pytest.raises(IoError):
        Waveform(samples=np.zeros((2, 100)))
    with pytest.raises(IoError):
        Waveform(samples=np.array([0.0, np.nan]))
    with pytest.raises(IoError):
        Waveform(samples=np.zeros(4), sample_rate=0)


def test_frame_features_shape_and_duration():
    z = FrameFeatures(data=np.zeros((100, 40)), frame_rate=50.0)
    assert z.num_frames == 100 and z.dim == 40
    assert z.duration == pytest.approx(2.0)
    with pytest.raises(IoError):
        FrameFeatures(data=np.zeros((0, 4)))
    with pytest.raises(IoError):
        FrameFeatures(data=np.zeros(10))


def test_alignment_entry_validation():
    AlignmentEntry(start=0.0, end=0.5, label="ba")
    with pytest.raises(IoError):
        AlignmentEntry(start=0.5, end=0.5, label="ba")
    with pytest.raises(IoError):
        AlignmentEntry(start=-0.1, end=0.5, label="ba")
    with pytest.raises(IoError):
        AlignmentEntry(start=0.0, end=0.5, label="")


# -- WAV ---------------------------------------------------------------------------


def test_wav_pcm16_header_echo(tmp_path):
    w = make_sine(440.0, duration=2.0)
    path = tmp_path / "a.wav"
    write_wav(w, path, encoding="pcm16")
    back = read_wav(path)
    assert back.sample_rate == 16000
    assert len(back) == 32000


def test_wav_pcm16_sine_within_one_lsb(tmp_path):
    w = make_sine(440.0, duration=0.25)
    path = tmp_path / "a.wav"
    write_wav(w, path, encoding="pcm16")
    back = read_wav(path)
    assert np.max(np.abs(back.samples - w.samples)) <= 1.0 / 32768.0


def test_wav_float32_round_trip(tmp_path):
    w = make_sine(100.0, duration=0.1)
    path = tmp_path / "a.wav"
    write_wav(w, path, encoding="float32")
    back = read_wav(path)
    assert np.array_equal(back.samples, w.samples.astype("<f4").astype(np.float64))


def test_wav_int16_fullscale_scaling(tmp_path):
    # A sample stored as 32767 must read back as 32767/32768.
    payload = np.array([32767, -32768, 0], dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    path = tmp_path / "full.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    w = read_wav(path)
    assert w.samples[0] == pytest.approx(32767 / 32768)
    assert w.samples[1] == -1.0
    assert w.samples[2] == 0.0


def test_wav_rejects_stereo(tmp_path):
    fmt = struct.pack("<HHIIHH", 1, 2, 16000, 64000, 4, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", 4) + b"\x00" * 4
    path = tmp_path / "stereo.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(IoError, match="multichannel"):
        read_wav(path)


def test_wav_rejects_garbage(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"NOTAWAVEFILE")
    with pytest.raises(IoError):
        read_wav(path)


# -- STNS tensors --------------------------------------------------------------------


def test_tensor_round_trip_small(tmp_path):
    t = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], dtype=np.float32)
    path = tmp_path / "t.stns"
    write_tensor(t, path)
    assert np.array_equal(read_tensor(path), t)


@settings(max_examples=60, deadline=None)
@given(arrays(dtype=np.float32,
              shape=array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=6),
              elements=st.floats(min_value=-1e6, max_value=1e6, width=32)))
def test_tensor_round_trip_bit_exact(t):
    import tempfile, os
    fd, path = tempfile.mkstemp(suffix=".stns")
    os.close(fd)
    try:
        write_tensor(t, path)
        back = read_tensor(path)
        assert back.dtype == np.float32
        assert back.shape == t.shape
        assert back.tobytes() == np.ascontiguousarray(t).tobytes()
    finally:
        os.unlink(path)


def test_tensor_bad_magic(tmp_path):
    path = tmp_path / "bad.stns"
    path.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(IoError, match="bad magic"):
        read_tensor(path)


def test_tensor_rank_zero_rejected(tmp_path):
    with pytest.raises(IoError, match="rank"):
        write_tensor(np.float32(3.0), tmp_path / "r0.stns")


def test_tensor_wrong_dtype_code(tmp_path):
    header = b"STNS" + struct.pack("<III", 1, 2, 1) + struct.pack("<Q", 1)
    path = tmp_path / "f64.stns"
    path.write_bytes(header + b"\x00" * 8)
    with pytest.raises(IoError, match="f32"):
        read_tensor(path)


def test_tensor_payload_size_mismatch(tmp_path):
    header = b"STNS" + struct.pack("<III", 1, 1, 1) + struct.pack("<Q", 4)
    path = tmp_path / "short.stns"
    path.write_bytes(header + b"\x00" * 8)  # promises 4 floats, ships 2
    with pytest.raises(IoError):
        read_tensor(path)


def test_load_features_requires_rank_two(tmp_path):
    path = tmp_path / "vec.stns"
    write_tensor(np.ones(5, dtype=np.float32), path)
    with pytest.raises(IoError, match="2-D"):
        load_features(path)
    write_tensor(np.ones((5, 3), dtype=np.float32), path)
    z = load_features(path, frame_rate=50.0)
    assert z.num_frames == 5 and z.dim == 3


# -- manifest ------------------------------------------------------------------------


def test_manifest_two_lines(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(
        '{"utterance_id": "u1", "speaker_id": "s1", "audio": "a.wav"}\n'
        '{"utterance_id": "u2", "speaker_id": "s2", "features": "f.stns"}\n')
    recs = read_manifest(path)
    assert [r.utterance_id for r in recs] == ["u1", "u2"]
    assert recs[0].audio == "a.wav" and recs[0].features is None
    assert recs[1].features == "f.stns"


def test_manifest_sorts_alignments_and_flags_overlap(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(
        '{"utterance_id": "u1", "speaker_id": "s", "alignments": '
        '[{"start": 0.5, "end": 0.9, "label": "b"}, {"start": 0.1, "end": 0.6, "label": "a"}]}\n')
    rec = read_manifest(path)[0]
    assert [a.label for a in rec.alignments] == ["a", "b"]
    assert rec.has_overlapping_alignments


def test_manifest_disjoint_alignments_not_flagged(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(
        '{"utterance_id": "u1", "speaker_id": "s", "alignments": '
        '[{"start": 0.0, "end": 0.5, "label": "a"}, {"start": 0.5, "end": 0.9, "label": "b"}]}\n')
    assert not read_manifest(path)[0].has_overlapping_alignments


def test_manifest_duplicate_id_names_offender(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(
        '{"utterance_id": "dup", "speaker_id": "s"}\n'
        '{"utterance_id": "dup", "speaker_id": "s"}\n')
    with pytest.raises(IoError, match="dup"):
        read_manifest(path)


def test_manifest_malformed_line_reports_number(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text('{"utterance_id": "u1", "speaker_id": "s"}\n{oops\n')
    with pytest.raises(IoError, match=":2:"):
        read_manifest(path)


def test_manifest_write_read_round_trip(tmp_path):
    recs = [
        UtteranceRecord(utterance_id="u1", speaker_id="s1", audio="a.wav",
                        alignments=[AlignmentEntry(0.0, 0.4, "ba"),
                                    AlignmentEntry(0.4, 0.8, "du")]),
        UtteranceRecord(utterance_id="u2", speaker_id="s2", features="f.stns"),
    ]
    path = tmp_path / "m.jsonl"
    write_manifest(recs, path)
    assert read_manifest(path) == recs
