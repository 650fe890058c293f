"""Command-line driver: config handling, subcommand dispatch, and artifact
emission (JSON-lines segments/units, CSV metrics, PGM similarity plots).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import clusterer, dsp, evaluator, segmenter, trainer
from .config import Config, ConfigError, apply_override, load_config
from .featurize import FeaturizerConfig, log_mel
from .io import (
    FrameFeatures,
    IoError,
    UtteranceRecord,
    load_features,
    read_manifest,
    read_tensor,
    read_wav,
    write_manifest,
    write_tensor,
    write_wav,
)
from .neural import EncoderConfig, MlpHeadConfig, encoder_forward, load_checkpoint


class CliError(ValueError):
    pass


# -- config plumbing -----------------------------------------------------------


def _config_epilog() -> str:
    lines = ["config keys (JSON sections; override with --set section.key=value):"]
    cfg = Config()
    for section_field in fields(cfg):
        section = getattr(cfg, section_field.name)
        for f in fields(section):
            lines.append(f"  {section_field.name}.{f.name} = {getattr(section, f.name)!r}")
    return "\n".join(lines)


def _load_cfg(args) -> Config:
    path = getattr(args, "config", None) or os.environ.get("SYLLABION_CONFIG")
    cfg = load_config(path) if path else Config()
    for item in getattr(args, "set", None) or []:
        apply_override(cfg, item)
    return cfg


def _featurizer_cfg(cfg: Config) -> FeaturizerConfig:
    f = cfg.featurizer
    return FeaturizerConfig(n_fft=f.n_fft, hop=f.hop, n_mels=f.n_mels,
                            fmin=f.fmin, fmax=f.fmax)


def _encoder_cfg(cfg: Config) -> EncoderConfig:
    e = cfg.encoder
    return EncoderConfig(in_dim=cfg.featurizer.n_mels, n_layers=e.n_layers,
                         d_model=e.d_model, n_heads=e.n_heads, d_ff=e.d_ff,
                         reinit_last_n=e.reinit_last_n)


def _head_cfgs(cfg: Config) -> tuple[MlpHeadConfig, MlpHeadConfig]:
    e = cfg.encoder
    projector = MlpHeadConfig(in_dim=e.d_model, hidden=e.projector_hidden,
                              out=e.projector_out)
    predictor = MlpHeadConfig(in_dim=e.projector_out, hidden=e.predictor_hidden,
                              out=e.predictor_out)
    return projector, predictor


def _target_layer(section_value):
    if section_value == "projector":
        return "projector"
    return int(section_value)


def _parallel_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_record_features(rec: UtteranceRecord, cfg: Config) -> FrameFeatures:
    if rec.features:
        return load_features(rec.features,
                             frame_rate=cfg.featurizer.sample_rate / cfg.featurizer.hop)
    if rec.audio:
        return log_mel(read_wav(rec.audio), _featurizer_cfg(cfg))
    raise CliError(f"{rec.utterance_id}: record has neither features nor audio")


def _encoded_features(records, cfg: Config, checkpoint: str | None,
                      layer, workers: int) -> list[FrameFeatures]:
    feats = _parallel_map(lambda r: _load_record_features(r, cfg), records, workers)
    if not checkpoint:
        return feats
    stores, _ = load_checkpoint(checkpoint)
    store = stores.get("teacher") or stores["student"]
    enc = _encoder_cfg(cfg)
    return _parallel_map(
        lambda z: FrameFeatures(
            data=encoder_forward(store, z.data, enc, layer=layer),
            frame_rate=z.frame_rate),
        feats, workers)


# -- subcommands -----------------------------------------------------------------


def cmd_perturb(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    out = _out_dir(args)
    rng = np.random.default_rng(cfg.byol.seed)
    for rec in records:
        if not rec.audio:
            raise CliError(f"{rec.utterance_id}: no audio to perturb")
        seed = int(rng.integers(0, 2**31 - 1))
        wave = read_wav(rec.audio)
        shifted = dsp.perturb_speaker(
            wave, threshold=cfg.dsp.gender_threshold_hz, rng_seed=seed,
            gain_db=cfg.dsp.shaping_gain_db, pitch_stat=cfg.dsp.pitch_stat)
        write_wav(shifted, out / f"{rec.utterance_id}.wav")
    print(f"perturbed {len(records)} utterances into {out}")
    return 0


def cmd_featurize(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    out = _out_dir(args)
    fcfg = _featurizer_cfg(cfg)

    def featurize(rec: UtteranceRecord):
        if not rec.audio:
            raise CliError(f"{rec.utterance_id}: no audio to featurize")
        feats = log_mel(read_wav(rec.audio), fcfg)
        path = out / f"{rec.utterance_id}.stns"
        write_tensor(feats.data, path)
        rec.features = str(path)
        return rec

    records = _parallel_map(featurize, records, args.workers)
    write_manifest(records, out / "manifest.jsonl")
    print(f"wrote {len(records)} feature tensors and {out / 'manifest.jsonl'}")
    return 0


def cmd_train(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    out = _out_dir(args)
    b = cfg.byol
    byol = trainer.ByolConfig(momentum=b.momentum, epochs=b.epochs,
                              batch_seconds=b.batch_seconds,
                              target_layer=_target_layer(b.target_layer),
                              seed=b.seed)
    projector, predictor = _head_cfgs(cfg)
    state = trainer.run_training(
        records, out, _encoder_cfg(cfg), projector, predictor, byol,
        featurizer=_featurizer_cfg(cfg), lr_min=b.lr_min, lr_max=b.lr_max,
        warmup_frac=b.warmup_frac, hold_frac=b.hold_frac,
        weight_decay=b.weight_decay)
    print(f"trained {state.step} steps; checkpoints in {out}")
    return 0


def _segment_one(z: FrameFeatures, cfg: Config) -> segmenter.Segmentation:
    return segmenter.segment_features(z, cfg.segmenter.second_per_syllable,
                                      cfg.segmenter.merge_threshold)


def cmd_segment(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    out = _out_dir(args)
    feats = _encoded_features(records, cfg, args.checkpoint,
                              cfg.segmenter.layer, args.workers)
    segs = _parallel_map(lambda z: _segment_one(z, cfg), feats, args.workers)
    path = out / "segments.jsonl"
    with open(path, "w") as fh:
        for rec, z, seg in zip(records, feats, segs):
            fh.write(json.dumps({
                "utterance_id": rec.utterance_id,
                "boundaries_frames": [int(b) for b in seg.boundaries],
                "boundaries_seconds": [float(t) for t in
                                       segmenter.boundaries_to_seconds(seg, z.frame_rate)],
            }) + "\n")
    print(f"wrote {path}")
    return 0


def cmd_cluster(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    out = _out_dir(args)
    feats = _encoded_features(records, cfg, args.checkpoint,
                              cfg.segmenter.layer, args.workers)
    pooled = [segmenter.pool_segments(_segment_one(z, cfg), z) for z in feats]
    stacked = np.concatenate([p.features for p in pooled], axis=0)
    c = cfg.clusterer
    k1 = min(c.k1, stacked.shape[0])
    k2 = min(c.k2, k1)
    codebook = clusterer.fit_codebook(stacked, k1, k2, seed=c.kmeans_seed,
                                      max_iter=c.kmeans_max_iter,
                                      rel_tol=c.kmeans_rel_tol,
                                      n_init=c.kmeans_n_init)
    write_tensor(codebook.centers.astype(np.float32), out / "centers.stns")
    (out / "center_to_unit.json").write_text(
        json.dumps([int(u) for u in codebook.center_to_unit]))
    print(f"fit codebook with {k1} centers, {k2} units in {out}")
    return 0


def _read_codebook(path: Path) -> clusterer.Codebook:
    centers = read_tensor(path / "centers.stns")
    mapping = json.loads((path / "center_to_unit.json").read_text())
    return clusterer.Codebook(centers=centers,
                              center_to_unit=np.asarray(mapping, dtype=np.int64))


def cmd_assign(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    out = _out_dir(args)
    codebook = _read_codebook(Path(args.codebook))
    feats = _encoded_features(records, cfg, args.checkpoint,
                              cfg.segmenter.layer, args.workers)
    path = out / "units.jsonl"
    with open(path, "w") as fh:
        for rec, z in zip(records, feats):
            pooled = segmenter.pool_segments(_segment_one(z, cfg), z)
            units = clusterer.assign_units(pooled, codebook)
            fh.write(json.dumps({
                "utterance_id": rec.utterance_id,
                "frame_rate": z.frame_rate,
                "tokens": [{"start": s, "end": e, "unit": u}
                           for s, e, u in units.tokens],
            }) + "\n")
    print(f"wrote {path}")
    return 0


def _read_units(path: str | Path) -> dict[str, tuple]:
    out = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CliError(f"{path}:{line_no}: invalid JSON ({exc})") from exc
            seq = clusterer.UnitSequence(tokens=tuple(
                (t["start"], t["end"], t["unit"]) for t in row["tokens"]))
            out[row["utterance_id"]] = (seq, float(row.get("frame_rate", 50.0)))
    return out


def _utterance_evals(records, units_path) -> list[evaluator.UtteranceEval]:
    units = _read_units(units_path)
    utts = []
    for rec in records:
        if rec.utterance_id not in units:
            raise CliError(f"{rec.utterance_id}: missing from {units_path}")
        seq, frame_rate = units[rec.utterance_id]
        utts.append(evaluator.UtteranceEval(
            alignments=rec.alignments or [], units=seq,
            frame_rate=frame_rate, speaker_id=rec.speaker_id))
    return utts


def cmd_eval_boundaries(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    utts = _utterance_evals(records, args.units)
    scores = evaluator.corpus_boundary_scores(utts, cfg.eval.boundary_tolerance_s)
    report = {"precision": scores.precision, "recall": scores.recall,
              "f1": scores.f1, "r_value": scores.r_value}
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_eval_units(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    utts = _utterance_evals(records, args.units)
    q = evaluator.corpus_unit_quality(utts)
    report = {"syllable_purity": q.syllable_purity,
              "cluster_purity": q.cluster_purity,
              "mutual_info_nats": q.mutual_info}
    print(json.dumps(report, sort_keys=True))
    return 0


def _probe_split(records, feats, test_fraction: float):
    """Deterministic per-speaker round-robin split over mean-pooled features,
    keeping every speaker represented on both sides."""
    order = sorted(range(len(records)), key=lambda i: records[i].utterance_id)
    by_speaker: dict[str, list[int]] = {}
    for i in order:
        by_speaker.setdefault(records[i].speaker_id, []).append(i)
    stride = max(2, int(round(1.0 / max(test_fraction, 1e-9))))
    train_x, train_y, test_x, test_y = [], [], [], []
    for speaker, idxs in sorted(by_speaker.items()):
        for pos, i in enumerate(idxs):
            row = feats[i].data.mean(axis=0)
            if pos % stride == stride - 1:
                test_x.append(row)
                test_y.append(speaker)
            else:
                train_x.append(row)
                train_y.append(speaker)
    return np.array(train_x), train_y, np.array(test_x), test_y


def cmd_eval_speaker(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    feats = _encoded_features(records, cfg, args.checkpoint,
                              cfg.segmenter.layer, args.workers)
    report = {}
    if args.units:
        utts = _utterance_evals(records, args.units)
        report["speaker_nmi"] = evaluator.corpus_speaker_nmi(utts)
    train_x, train_y, test_x, test_y = _probe_split(
        records, feats, cfg.eval.probe_test_fraction)
    report["probe_accuracy"] = evaluator.speaker_probe(
        train_x, train_y, test_x, test_y,
        epochs=cfg.eval.probe_epochs, lr=cfg.eval.probe_lr)
    report["n_speakers"] = len(set(train_y))
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_layer_sweep(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    out = _out_dir(args)
    stores, _ = load_checkpoint(args.checkpoint)
    store = stores.get("teacher") or stores["student"]
    feats = _parallel_map(lambda r: _load_record_features(r, cfg), records,
                          args.workers)
    layers = [int(x) for x in args.layers.split(",")]
    rows = evaluator.layer_sweep(
        store, _encoder_cfg(cfg), feats,
        [rec.alignments or [] for rec in records],
        [rec.speaker_id for rec in records], layers,
        k1=cfg.clusterer.k1, k2=cfg.clusterer.k2,
        second_per_syllable=cfg.segmenter.second_per_syllable,
        merge_threshold=cfg.segmenter.merge_threshold,
        tol=cfg.eval.boundary_tolerance_s, seed=cfg.clusterer.kmeans_seed,
        n_init=cfg.clusterer.kmeans_n_init, out_csv=out / "layer_sweep.csv")
    print(f"wrote {out / 'layer_sweep.csv'} ({len(rows)} layers)")
    return 0


def write_pgm(image: np.ndarray, path: str | Path) -> None:
    """8-bit binary PGM (P5, maxval 255)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise CliError("PGM image must be 2-D")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.astype(np.uint8).tobytes())


def plot_ssm(z: FrameFeatures, seg: segmenter.Segmentation,
             ref_boundaries_frames: list[int], out_path: str | Path) -> Path:
    """Min-max normalized self-similarity matrix as a grayscale PGM, plus a
    CSV of predicted and reference boundary frames for overlays."""
    sim = segmenter.self_similarity(z).matrix
    lo, hi = sim.min(), sim.max()
    scale = (sim - lo) / (hi - lo) if hi > lo else np.zeros_like(sim)
    img = np.round(scale * 255.0)
    out_path = Path(out_path)
    pgm = out_path if out_path.suffix == ".pgm" else out_path.with_suffix(".pgm")
    write_pgm(img, pgm)
    with open(pgm.with_suffix(".csv"), "w") as fh:
        fh.write("kind,frame\n")
        for b in seg.boundaries:
            fh.write(f"predicted,{int(b)}\n")
        for b in ref_boundaries_frames:
            fh.write(f"reference,{int(b)}\n")
    return pgm


def cmd_plot_ssm(args, cfg: Config) -> int:
    records = read_manifest(args.manifest)
    out = _out_dir(args)
    wanted = [r for r in records if r.utterance_id == args.utterance] \
        if args.utterance else records[:1]
    if not wanted:
        raise CliError(f"utterance {args.utterance} not in manifest")
    rec = wanted[0]
    z = _encoded_features([rec], cfg, args.checkpoint, cfg.segmenter.layer,
                          workers=1)[0]
    seg = _segment_one(z, cfg)
    ref, _ = evaluator.reference_boundaries(rec.alignments or [])
    ref_frames = [int(round(t * z.frame_rate)) for t in ref]
    pgm = plot_ssm(z, seg, ref_frames, out / f"{rec.utterance_id}.pgm")
    print(f"wrote {pgm} and {pgm.with_suffix('.csv')}")
    return 0


def run_pipeline(manifest: str | Path, cfg: Config, out_dir: str | Path,
                 train: bool = False, workers: int = 1) -> dict:
    """Feature load, optional fine-tuning, segmentation, clustering, and the
    full metric report. Any stage failure aborts naming the stage."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage = "load"
    try:
        records = read_manifest(manifest)
        feats = _parallel_map(lambda r: _load_record_features(r, cfg),
                              records, workers)
        checkpoint_store = None
        if train:
            stage = "train"
            b = cfg.byol
            byol = trainer.ByolConfig(momentum=b.momentum, epochs=b.epochs,
                                      batch_seconds=b.batch_seconds,
                                      target_layer=_target_layer(b.target_layer),
                                      seed=b.seed)
            projector, predictor = _head_cfgs(cfg)
            state = trainer.run_training(
                records, out / "train", _encoder_cfg(cfg), projector, predictor,
                byol, featurizer=_featurizer_cfg(cfg), lr_min=b.lr_min,
                lr_max=b.lr_max, warmup_frac=b.warmup_frac,
                hold_frac=b.hold_frac, weight_decay=b.weight_decay)
            checkpoint_store = state.teacher
        if checkpoint_store is not None:
            stage = "encode"
            enc = _encoder_cfg(cfg)
            feats = [FrameFeatures(
                data=encoder_forward(checkpoint_store, z.data, enc,
                                     layer=min(cfg.segmenter.layer, enc.n_layers)),
                frame_rate=z.frame_rate) for z in feats]
        stage = "segment+cluster"
        units = evaluator.discover_units(
            feats, cfg.clusterer.k1, cfg.clusterer.k2,
            cfg.segmenter.second_per_syllable, cfg.segmenter.merge_threshold,
            seed=cfg.clusterer.kmeans_seed, n_init=cfg.clusterer.kmeans_n_init)
        stage = "eval"
        utts = [evaluator.UtteranceEval(
            alignments=rec.alignments or [], units=u, frame_rate=z.frame_rate,
            speaker_id=rec.speaker_id)
            for rec, u, z in zip(records, units, feats)]
        scores = evaluator.corpus_boundary_scores(utts, cfg.eval.boundary_tolerance_s)
        quality = evaluator.corpus_unit_quality(utts)
        report = {
            "precision": scores.precision,
            "recall": scores.recall,
            "f1": scores.f1,
            "r_value": scores.r_value,
            "syllable_purity": quality.syllable_purity,
            "cluster_purity": quality.cluster_purity,
            "mutual_info_nats": quality.mutual_info,
        }
        speakers = {rec.speaker_id for rec in records}
        if len(speakers) >= 2:
            report["speaker_nmi"] = evaluator.corpus_speaker_nmi(utts)
        stage = "report"
        (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2))
        return report
    except Exception as exc:
        raise CliError(f"stage {stage}: {exc}") from exc


def cmd_pipeline(args, cfg: Config) -> int:
    report = run_pipeline(args.manifest, cfg, args.out_dir, train=args.train,
                          workers=args.workers)
    print(json.dumps(report, sort_keys=True))
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="syllabion",
        description="Speaker-invariant syllabic unit discovery pipeline.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True, checkpoint=False):
        p.add_argument("--config", help="JSON config path "
                       "(falls back to $SYLLABION_CONFIG)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config scalar")
        p.add_argument("--out-dir", default="out", help="output directory")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel workers (results independent of N)")
        if manifest:
            p.add_argument("--manifest", required=True,
                           help="JSON-lines utterance manifest")
        if checkpoint:
            p.add_argument("--checkpoint", default=None,
                           help="checkpoint directory for encoder features")

    p = sub.add_parser("perturb", help="write speaker-perturbed copies of a corpus")
    common(p)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("featurize", help="write log-mel feature tensors")
    common(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="run student-teacher fine-tuning")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="emit discovered boundaries")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("cluster", help="fit the two-step codebook")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("assign", help="label segments with codebook units")
    common(p, checkpoint=True)
    p.add_argument("--codebook", required=True,
                   help="directory with centers.stns + center_to_unit.json")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("eval-boundaries", help="score boundaries against alignments")
    common(p)
    p.add_argument("--units", required=True, help="units.jsonl from assign")
    p.set_defaults(func=cmd_eval_boundaries)

    p = sub.add_parser("eval-units", help="purity and mutual information")
    common(p)
    p.add_argument("--units", required=True, help="units.jsonl from assign")
    p.set_defaults(func=cmd_eval_units)

    p = sub.add_parser("eval-speaker", help="speaker NMI and linear probe")
    common(p, checkpoint=True)
    p.add_argument("--units", default=None, help="units.jsonl for speaker NMI")
    p.set_defaults(func=cmd_eval_speaker)

    p = sub.add_parser("layer-sweep", help="metrics per encoder layer")
    common(p, checkpoint=True)
    p.add_argument("--layers", required=True, help="comma-separated layer indices")
    p.set_defaults(func=cmd_layer_sweep)

    p = sub.add_parser("plot-ssm", help="similarity-matrix PGM + boundary CSV")
    common(p, checkpoint=True)
    p.add_argument("--utterance", default=None, help="utterance id (default: first)")
    p.set_defaults(func=cmd_plot_ssm)

    p = sub.add_parser("pipeline", help="features -> units -> metric report")
    common(p)
    p.add_argument("--train", action="store_true", help="fine-tune before segmenting")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_cfg(args)
        return int(args.func(args, cfg) or 0)
    except (CliError, ConfigError, IoError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
