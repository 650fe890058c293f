"""Shared synthetic-signal and synthetic-corpus builders for the test suite."""

import numpy as np
import pytest

from syllabion.io import Waveform


def make_sine(freq: float, duration: float = 1.0, sr: int = 16000,
              amp: float = 0.5) -> Waveform:
    t = np.arange(int(round(duration * sr))) / sr
    return Waveform(samples=(amp * np.sin(2 * np.pi * freq * t)), sample_rate=sr)


def make_sawtooth(freq: float, duration: float = 1.0, sr: int = 16000,
                  amp: float = 0.5) -> Waveform:
    t = np.arange(int(round(duration * sr))) / sr
    phase = (t * freq) % 1.0
    return Waveform(samples=(amp * (2.0 * phase - 1.0)), sample_rate=sr)


def planted_segment_features(rng, n_segments: int, dim: int,
                             min_len: int = 10, max_len: int = 31,
                             noise: float = 0.1):
    """Piecewise-constant frames: one fresh unit-norm vector per segment.
    Returns (T x dim array, true interior boundary frames)."""
    lens = rng.integers(min_len, max_len, n_segments)
    protos = rng.normal(size=(n_segments, dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    rows = np.concatenate([np.tile(protos[i], (lens[i], 1))
                           for i in range(n_segments)])
    rows = rows + rng.normal(0.0, noise, rows.shape)
    bounds = np.cumsum(lens)[:-1]
    return rows, bounds


@pytest.fixture
def rng():
    return np.random.default_rng(0)
