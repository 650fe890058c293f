"""Run configuration: nested dataclass sections, JSON serialization with
unknown-key rejection, and dotted-path overrides for CLI flags.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class DspSection:
    gender_threshold_hz: float = 155.0
    shaping_gain_db: float = 6.0
    pitch_stat: str = "median"


@dataclass
class FeaturizerSection:
    sample_rate: int = 16000
    n_fft: int = 400
    hop: int = 320
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0


@dataclass
class EncoderSection:
    n_layers: int = 12
    d_model: int = 768
    n_heads: int = 12
    d_ff: int = 3072
    reinit_last_n: int = 3
    projector_hidden: int = 2048
    projector_out: int = 256
    predictor_hidden: int = 2048
    predictor_out: int = 256


@dataclass
class ByolSection:
    momentum: float = 0.999
    epochs: int = 15
    batch_seconds: float = 360.0
    target_layer: str = "projector"
    lr_min: float = 1e-5
    lr_max: float = 1e-4
    warmup_frac: float = 0.03
    hold_frac: float = 0.47
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class SegmenterSection:
    second_per_syllable: float = 0.2
    merge_threshold: float = 0.3
    layer: int = 8


@dataclass
class ClustererSection:
    k1: int = 16384
    k2: int = 4096
    kmeans_seed: int = 0
    kmeans_max_iter: int = 100
    kmeans_rel_tol: float = 1e-4
    kmeans_n_init: int = 10


@dataclass
class EvalSection:
    boundary_tolerance_s: float = 0.05
    probe_epochs: int = 300
    probe_lr: float = 0.5
    probe_test_fraction: float = 0.5


@dataclass
class PathsSection:
    manifest: str = ""
    out_dir: str = "runs/default"
    checkpoint: str = ""


@dataclass
class Config:
    dsp: DspSection = field(default_factory=DspSection)
    featurizer: FeaturizerSection = field(default_factory=FeaturizerSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    byol: ByolSection = field(default_factory=ByolSection)
    segmenter: SegmenterSection = field(default_factory=SegmenterSection)
    clusterer: ClustererSection = field(default_factory=ClustererSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)


_SECTIONS = {f.name: f.type for f in fields(Config)}


def _fill_section(section, data: dict, where: str):
    known = {f.name: f for f in fields(section)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {where}.{key}")
        current = getattr(section, key)
        if isinstance(current, bool) and not isinstance(value, bool):
            raise ConfigError(f"{where}.{key}: expected bool")
        if isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}.{key}: expected int, got {value!r}")
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{key}: expected number, got {value!r}")
            value = float(value)
        elif isinstance(current, str):
            if not isinstance(value, (str, int)):
                raise ConfigError(f"{where}.{key}: expected string, got {value!r}")
        setattr(section, key, value)
    return section


def config_from_dict(data: dict) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = Config()
    for name, value in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section {name}")
        if not isinstance(value, dict):
            raise ConfigError(f"section {name} must be an object")
        _fill_section(getattr(cfg, name), value, name)
    return cfg


def config_to_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path: str | Path) -> Config:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")


def apply_override(cfg: Config, dotted: str) -> Config:
    """Apply one 'section.key=value' override; values parse as JSON scalars
    first, falling back to raw strings."""
    if "=" not in dotted:
        raise ConfigError(f"override must look like section.key=value: {dotted!r}")
    path, raw = dotted.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override path must be section.key: {path!r}")
    section_name, key = parts
    if section_name not in _SECTIONS:
        raise ConfigError(f"unknown section {section_name}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    _fill_section(getattr(cfg, section_name), {key: value}, section_name)
    return cfg
