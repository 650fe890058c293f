"""End-to-end command behavior on a small synthetic corpus."""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "scripts"))
from make_synthetic_corpus import build_corpus

from syllabion.cli import CliError, main, run_pipeline, write_pgm
from syllabion.config import Config
from syllabion.io import read_manifest, read_tensor, read_wav

FAST = ["--set", "clusterer.k1=12", "--set", "clusterer.k2=8",
        "--set", "clusterer.kmeans_n_init=2"]
# raw log-mel means are nearly parallel (the log floor dominates), so the
# cosine merge collapses everything; disabling it keeps the artifact chain
# multi-segment without a trained encoder
NO_MERGE = ["--set", "segmenter.merge_threshold=1.01"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    records = build_corpus(root, n_utterances=8, n_speakers=2, seed=0)
    return root, records


@pytest.fixture(scope="module")
def artifacts(corpus, tmp_path_factory):
    """featurize -> segment -> cluster -> assign, shared by the eval tests."""
    root, _ = corpus
    manifest = str(root / "manifest.jsonl")
    out = tmp_path_factory.mktemp("artifacts")
    feat = out / "feat"
    assert main(["featurize", "--manifest", manifest,
                 "--out-dir", str(feat)]) == 0
    feat_manifest = str(feat / "manifest.jsonl")
    assert main(["segment", "--manifest", feat_manifest,
                 "--out-dir", str(out / "seg")] + FAST + NO_MERGE) == 0
    assert main(["cluster", "--manifest", feat_manifest,
                 "--out-dir", str(out / "cb")] + FAST + NO_MERGE) == 0
    assert main(["assign", "--manifest", feat_manifest,
                 "--codebook", str(out / "cb"),
                 "--out-dir", str(out / "units")] + FAST + NO_MERGE) == 0
    return {"manifest": feat_manifest,
            "segments": out / "seg" / "segments.jsonl",
            "codebook": out / "cb",
            "units": out / "units" / "units.jsonl"}


def _rows(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- individual commands -----------------------------------------------------------


def test_featurize_writes_tensors_and_manifest(artifacts, corpus):
    root, records = corpus
    out_records = read_manifest(artifacts["manifest"])
    assert len(out_records) == len(records)
    for rec in out_records:
        data = read_tensor(rec.features)
        wave = read_wav(rec.audio)
        assert data.shape == (1 + (wave.samples.size - 400) // 320, 40)
        assert data.dtype == np.float32


def test_segment_emits_valid_boundaries(artifacts):
    rows = _rows(artifacts["segments"])
    assert len(rows) == 8
    for row in rows:
        frames = row["boundaries_frames"]
        assert frames[0] == 0
        assert len(frames) > 2  # several segments per utterance
        assert all(a < b for a, b in zip(frames, frames[1:]))
        assert row["boundaries_seconds"] == pytest.approx(
            [f / 50.0 for f in frames])  # 16 kHz / hop 320


def test_cluster_artifacts_round_trip(artifacts):
    centers = read_tensor(artifacts["codebook"] / "centers.stns")
    mapping = json.loads((artifacts["codebook"] / "center_to_unit.json").read_text())
    assert centers.shape == (12, 40)
    assert len(mapping) == 12
    assert max(mapping) < 8


def test_assign_tokens_are_contiguous(artifacts):
    for row in _rows(artifacts["units"]):
        toks = row["tokens"]
        assert toks[0]["start"] == 0
        for a, b in zip(toks, toks[1:]):
            assert b["start"] == a["end"]
        assert all(0 <= t["unit"] < 8 for t in toks)


def test_eval_boundaries_reports_scores(artifacts, capsys):
    assert main(["eval-boundaries", "--manifest", artifacts["manifest"],
                 "--units", str(artifacts["units"])]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"precision", "recall", "f1", "r_value"}
    assert 0.0 <= report["precision"] <= 1.0
    assert 0.0 <= report["recall"] <= 1.0


def test_eval_units_reports_quality(artifacts, capsys):
    assert main(["eval-units", "--manifest", artifacts["manifest"],
                 "--units", str(artifacts["units"])]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"syllable_purity", "cluster_purity", "mutual_info_nats"}
    assert report["mutual_info_nats"] >= 0.0


def test_eval_speaker_probe_and_nmi(artifacts, capsys):
    assert main(["eval-speaker", "--manifest", artifacts["manifest"],
                 "--units", str(artifacts["units"])]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"speaker_nmi", "probe_accuracy", "n_speakers"}
    assert report["n_speakers"] == 2
    assert 0.0 <= report["probe_accuracy"] <= 1.0
    assert 0.0 <= report["speaker_nmi"] <= 1.0


def test_perturb_preserves_length(corpus, tmp_path):
    root, records = corpus
    assert main(["perturb", "--manifest", str(root / "manifest.jsonl"),
                 "--out-dir", str(tmp_path)]) == 0
    for rec in records[:3]:
        original = read_wav(rec.audio)
        shifted = read_wav(tmp_path / f"{rec.utterance_id}.wav")
        assert shifted.samples.size == original.samples.size
        assert shifted.sample_rate == original.sample_rate
        assert not np.array_equal(shifted.samples, original.samples)


def test_plot_ssm_writes_pgm_and_csv(artifacts, tmp_path, capsys):
    assert main(["plot-ssm", "--manifest", artifacts["manifest"],
                 "--utterance", "utt001", "--out-dir", str(tmp_path)]) == 0
    pgm = tmp_path / "utt001.pgm"
    blob = pgm.read_bytes()
    magic, dims, maxval, rest = blob.split(b"\n", 3)
    assert magic == b"P5"
    w, h = map(int, dims.split())
    assert w == h  # self-similarity is square
    assert maxval == b"255"
    assert len(rest) == w * h
    assert max(rest) == 255 and min(rest) == 0  # min-max normalized
    lines = (tmp_path / "utt001.csv").read_text().splitlines()
    assert lines[0] == "kind,frame"
    kinds = {line.split(",")[0] for line in lines[1:]}
    assert kinds == {"predicted", "reference"}
    predicted = [int(line.split(",")[1]) for line in lines[1:]
                 if line.startswith("predicted")]
    assert predicted[0] == 0
    assert predicted[-1] == w


def test_write_pgm_rejects_non_2d():
    with pytest.raises(CliError, match="2-D"):
        write_pgm(np.zeros(5), "/dev/null")


# -- pipeline ----------------------------------------------------------------------


def test_pipeline_report_schema_and_determinism(corpus, tmp_path, capsys):
    root, _ = corpus
    args = (["pipeline", "--manifest", str(root / "manifest.jsonl")]
            + FAST + NO_MERGE)
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    out_a = capsys.readouterr().out
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    out_b = capsys.readouterr().out
    assert out_a == out_b
    report = json.loads(out_a)
    assert set(report) == {"precision", "recall", "f1", "r_value",
                           "syllable_purity", "cluster_purity",
                           "mutual_info_nats", "speaker_nmi"}
    assert all(np.isfinite(v) for v in report.values())
    on_disk = json.loads((tmp_path / "a" / "report.json").read_text())
    assert on_disk == report


def test_pipeline_abort_names_stage(corpus, tmp_path):
    root, _ = corpus
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"utterance_id": "u0", "speaker_id": "s0",
                               "audio": str(tmp_path / "missing.wav")}) + "\n")
    with pytest.raises(CliError, match="stage load"):
        run_pipeline(bad, Config(), tmp_path / "out")


def test_workers_do_not_change_results(artifacts, tmp_path):
    base = ["segment", "--manifest", artifacts["manifest"]] + FAST + NO_MERGE
    assert main(base + ["--out-dir", str(tmp_path / "w1"), "--workers", "1"]) == 0
    assert main(base + ["--out-dir", str(tmp_path / "w4"), "--workers", "4"]) == 0
    assert (tmp_path / "w1" / "segments.jsonl").read_text() == \
        (tmp_path / "w4" / "segments.jsonl").read_text()


# -- training-dependent commands ---------------------------------------------------


TINY_TRAIN = ["--set", "encoder.n_layers=1", "--set", "encoder.d_model=8",
              "--set", "encoder.n_heads=2", "--set", "encoder.d_ff=16",
              "--set", "encoder.reinit_last_n=1",
              "--set", "encoder.projector_hidden=8",
              "--set", "encoder.projector_out=4",
              "--set", "encoder.predictor_hidden=8",
              "--set", "encoder.predictor_out=4",
              "--set", "byol.epochs=1", "--set", "byol.batch_seconds=4.0",
              "--set", "byol.momentum=0.99",
              "--set", "segmenter.layer=1"]


@pytest.fixture(scope="module")
def checkpoint(corpus, tmp_path_factory):
    root, _ = corpus
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--manifest", str(root / "manifest.jsonl"),
                 "--out-dir", str(out)] + TINY_TRAIN) == 0
    return out / "epoch_001"


def test_train_writes_checkpoint_and_log(checkpoint):
    assert (checkpoint / "index.json").exists()
    log = (checkpoint.parent / "loss_log.csv").read_text().splitlines()
    assert log[0] == "step,lr,loss"
    assert len(log) >= 2


def test_segment_with_checkpoint_features(artifacts, checkpoint, tmp_path):
    assert main(["segment", "--manifest", artifacts["manifest"],
                 "--checkpoint", str(checkpoint),
                 "--out-dir", str(tmp_path)] + TINY_TRAIN) == 0
    rows = _rows(tmp_path / "segments.jsonl")
    assert len(rows) == 8


def test_layer_sweep_csv(artifacts, checkpoint, tmp_path):
    assert main(["layer-sweep", "--manifest", artifacts["manifest"],
                 "--checkpoint", str(checkpoint), "--layers", "0,1",
                 "--out-dir", str(tmp_path)] + TINY_TRAIN + FAST) == 0
    lines = (tmp_path / "layer_sweep.csv").read_text().splitlines()
    assert lines[0].split(",")[0] == "layer"
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1"]


# -- config plumbing and errors ----------------------------------------------------


def test_set_override_changes_behavior(artifacts, tmp_path):
    # a huge per-syllable budget collapses every utterance to one segment
    assert main(["segment", "--manifest", artifacts["manifest"],
                 "--out-dir", str(tmp_path),
                 "--set", "segmenter.second_per_syllable=10.0"]) == 0
    for row in _rows(tmp_path / "segments.jsonl"):
        assert len(row["boundaries_frames"]) == 2


def test_config_env_fallback(artifacts, tmp_path, monkeypatch):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(
        {"segmenter": {"second_per_syllable": 10.0}}))
    monkeypatch.setenv("SYLLABION_CONFIG", str(cfg_path))
    assert main(["segment", "--manifest", artifacts["manifest"],
                 "--out-dir", str(tmp_path / "out")]) == 0
    for row in _rows(tmp_path / "out" / "segments.jsonl"):
        assert len(row["boundaries_frames"]) == 2


def test_errors_exit_one_with_prefix(tmp_path, capsys):
    assert main(["segment", "--manifest", str(tmp_path / "nope.jsonl"),
                 "--out-dir", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error: ")
    assert main(["segment", "--manifest", str(tmp_path / "nope.jsonl"),
                 "--out-dir", str(tmp_path),
                 "--set", "segmenter.bogus=1"]) == 1
    assert "unknown key" in capsys.readouterr().err


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["transmogrify"])
