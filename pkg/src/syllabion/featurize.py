"""Log-mel frame features: the frozen front end of the pipeline.

20 ms hop at 16 kHz gives the 50 fps frame rate every other stage assumes.
Frames are zero-padded to the next power of two before the transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import FrameFeatures, Waveform

LOG_FLOOR = 1e-6


@dataclass(frozen=True)
class FeaturizerConfig:
    n_fft: int = 400
    hop: int = 320
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0

    def __post_init__(self):
        if self.hop > self.n_fft:
            raise ValueError("hop must not exceed n_fft")
        if self.n_mels < 2:
            raise ValueError("n_mels must be >= 2")


def dft_real(frame: np.ndarray) -> np.ndarray:
    """One-sided DFT: X[k] = sum_n x[n] exp(-2*pi*i*k*n/N) for k in [0, N/2]."""
    return np.fft.rfft(np.asarray(frame, dtype=np.float64))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_bins: int, sample_rate: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular mel filters (peak 1) over one-sided FFT bins."""
    if fmax > sample_rate / 2:
        raise ValueError("fmax must not exceed the Nyquist frequency")
    mel_pts = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_bins) * sample_rate / (2.0 * (n_bins - 1))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def frame_signal(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Slice into overlapping frames: T = 1 + floor((len - n_fft) / hop)."""
    n = len(samples)
    if n < n_fft:
        raise ValueError(f"input too short: {n} samples < n_fft {n_fft}")
    t = 1 + (n - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(t)[:, None]
    return samples[idx]


def log_mel(w: Waveform, cfg: FeaturizerConfig = FeaturizerConfig()) -> FrameFeatures:
    """Hann window, power spectrum, mel filterbank, log(x + 1e-6)."""
    frames = frame_signal(w.samples, cfg.n_fft, cfg.hop)
    window = np.hanning(cfg.n_fft)
    n_pad = 1 << (cfg.n_fft - 1).bit_length()
    padded = np.zeros((frames.shape[0], n_pad))
    padded[:, : cfg.n_fft] = frames * window
    spectrum = np.fft.rfft(padded, axis=1)
    power = np.abs(spectrum) ** 2
    fb = mel_filterbank(cfg.n_mels, n_pad // 2 + 1, w.sample_rate, cfg.fmin, cfg.fmax)
    mel = power @ fb.T
    return FrameFeatures(
        data=np.log(mel + LOG_FLOOR).astype(np.float32),
        frame_rate=w.sample_rate / cfg.hop,
    )
