"""Thin exporter: run a speech encoder checkpoint over a manifest and dump
per-layer frame features as STNS tensors."""

from .export import (ExportSpec, export_alignments, export_features,
                     load_alignment_file)
from .model import (Checkpoint, forward, load_checkpoint, random_checkpoint,
                    save_checkpoint)
from .stns import BridgeError, read_tensor, write_tensor

__all__ = [
    "BridgeError",
    "Checkpoint",
    "ExportSpec",
    "export_alignments",
    "export_features",
    "forward",
    "load_alignment_file",
    "load_checkpoint",
    "random_checkpoint",
    "read_tensor",
    "save_checkpoint",
    "write_tensor",
]
