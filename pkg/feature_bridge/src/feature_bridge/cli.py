"""Command-line front end for manifest-driven feature export."""

import argparse
import sys

from .export import ExportSpec, export_features
from .stns import BridgeError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="export-features",
        description="Run a speech encoder checkpoint over a manifest and dump "
                    "per-layer frame features as STNS tensors.")
    p.add_argument("--model", required=True, help="checkpoint path (.npz)")
    p.add_argument("--layers", required=True,
                   help="comma-separated 1-based layer indices, e.g. 8,9")
    p.add_argument("--manifest", required=True, help="JSON-lines manifest")
    p.add_argument("--out", required=True, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        layers = tuple(int(tok) for tok in args.layers.split(",") if tok.strip())
    except ValueError:
        print(f"error: --layers must be comma-separated integers, got {args.layers!r}",
              file=sys.stderr)
        return 1
    try:
        spec = ExportSpec(model=args.model, layers=layers,
                          manifest=args.manifest, out_dir=args.out)
        written, manifests = export_features(spec)
    except (BridgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(written)} feature tensors")
    for layer, path in sorted(manifests.items()):
        print(f"layer {layer}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
