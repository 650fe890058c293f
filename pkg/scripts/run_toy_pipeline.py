"""End-to-end demo at desk scale: synthesize a small corpus, fine-tune the
encoder briefly on perturbation pairs, then segment with encoder features,
cluster, and print the metric report. Everything runs through the CLI, so
this doubles as a smoke test of the command surface.

Takes a couple of minutes on one core. Outputs land under --out:
corpus/ (WAVs + manifest), run/train/ (checkpoints + loss log), and
run/report.json.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from make_synthetic_corpus import build_corpus

from syllabion.cli import main as syllabion

# small encoder and codebook; raw log-mel segment means are nearly parallel
# (the log floor dominates), so adjacent-merge stays disabled at this scale
TINY = [
    "--set", "encoder.n_layers=2", "--set", "encoder.d_model=16",
    "--set", "encoder.n_heads=4", "--set", "encoder.d_ff=32",
    "--set", "encoder.reinit_last_n=1",
    "--set", "encoder.projector_hidden=16", "--set", "encoder.projector_out=8",
    "--set", "encoder.predictor_hidden=16", "--set", "encoder.predictor_out=8",
    "--set", "byol.epochs=1", "--set", "byol.batch_seconds=4.0",
    "--set", "segmenter.layer=2", "--set", "segmenter.merge_threshold=1.01",
    "--set", "clusterer.k1=24", "--set", "clusterer.k2=12",
    "--set", "clusterer.kmeans_n_init=3",
]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="toy_run", help="working directory")
    ap.add_argument("--utterances", type=int, default=10)
    ap.add_argument("--speakers", type=int, default=2)
    args = ap.parse_args()

    out = Path(args.out)
    build_corpus(out / "corpus", n_utterances=args.utterances,
                 n_speakers=args.speakers, seed=0)
    manifest = out / "corpus" / "manifest.jsonl"
    print(f"corpus ready: {manifest}")
    return syllabion(["pipeline", "--train",
                      "--manifest", str(manifest),
                      "--out-dir", str(out / "run"), *TINY])


if __name__ == "__main__":
    sys.exit(main())
