"""Regenerate the checked-in STNS fixture consumed by the primary package's
io tests. Everything here is deterministic: a seeded checkpoint over a fixed
synthetic waveform, exported through the normal bridge path."""

import hashlib
import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
from scipy.io import wavfile

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from feature_bridge import (ExportSpec, export_features, random_checkpoint,
                            read_tensor, save_checkpoint)

REPO_ROOT = Path(__file__).resolve().parents[2]
FIXTURE_DIR = REPO_ROOT / "tests" / "fixtures"
SR = 16000


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        t = np.arange(int(0.34 * SR)) / SR
        x = (0.4 * np.sin(2 * np.pi * 180 * t)
             + 0.2 * np.sin(2 * np.pi * 560 * t)
             + 0.1 * np.sin(2 * np.pi * 1250 * t + 1.0)).astype(np.float32)
        wavfile.write(tmp / "fixture0.wav", SR, x)
        with open(tmp / "manifest.jsonl", "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"utterance_id": "fixture0",
                                 "speaker_id": "spk0",
                                 "audio": str(tmp / "fixture0.wav")}) + "\n")
        save_checkpoint(random_checkpoint(hidden=12, n_layers=3, seed=7),
                        tmp / "model.npz")
        written, _ = export_features(
            ExportSpec(model=str(tmp / "model.npz"), layers=(2,),
                       manifest=str(tmp / "manifest.jsonl"),
                       out_dir=str(tmp / "out")))
        FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
        stns = FIXTURE_DIR / "bridge_features.stns"
        shutil.copyfile(written[0], stns)

    arr = read_tensor(stns)
    t_max, d_max = arr.shape[0] - 1, arr.shape[1] - 1
    coords = [[0, 0], [t_max, d_max], [t_max // 2, d_max // 2], [1, 2], [3, 0]]
    meta = {
        "shape": list(arr.shape),
        "dtype": str(arr.dtype),
        "sha256": hashlib.sha256(stns.read_bytes()).hexdigest(),
        "samples": [[c, float(arr[tuple(c)])] for c in coords],
    }
    (FIXTURE_DIR / "bridge_features.json").write_text(
        json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {stns} {arr.shape} and its metadata")
    return 0


if __name__ == "__main__":
    sys.exit(main())
