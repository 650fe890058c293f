"""Log-mel front end against naive-DFT and filterbank oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syllabion.featurize import (FeaturizerConfig, LOG_FLOOR, dft_real,
                                 frame_signal, log_mel, mel_filterbank)
from syllabion.io import Waveform

from conftest import make_sine


def naive_dft(x):
    """O(N^2) reference: X[k] = sum_n x[n] exp(-2 pi i k n / N), k in [0, N/2]."""
    n = len(x)
    k = np.arange(n // 2 + 1)[:, None]
    nn = np.arange(n)[None, :]
    return (np.asarray(x, dtype=np.float64)[None, :]
            * np.exp(-2j * np.pi * k * nn / n)).sum(axis=1)


# -- dft_real -----------------------------------------------------------------------


def test_dft_impulse_flat_spectrum():
    x = np.zeros(16)
    x[0] = 1.0
    assert np.allclose(np.abs(dft_real(x)), 1.0, atol=1e-12)


def test_dft_constant_concentrates_at_dc():
    x = np.ones(32)
    spec = dft_real(x)
    assert spec[0] == pytest.approx(32.0)
    assert np.max(np.abs(spec[1:])) < 1e-9


def test_dft_matches_naive_oracle(rng):
    for _ in range(10):
        x = rng.normal(size=16)
        assert np.max(np.abs(dft_real(x) - naive_dft(x))) < 1e-5


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=2, max_value=64),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_dft_parseval(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    spec = dft_real(x)
    # one-sided sum: interior bins count twice, DC and (for even n) Nyquist once
    weights = np.full(len(spec), 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    lhs = np.sum(x**2)
    rhs = np.sum(weights * np.abs(spec) ** 2) / n
    assert abs(lhs - rhs) <= 1e-4 * max(lhs, 1e-12)


# -- framing ------------------------------------------------------------------------


def test_frame_count_formula():
    z = log_mel(make_sine(440.0, duration=1.0))
    assert z.num_frames == 1 + (16000 - 400) // 320 == 49
    assert z.frame_rate == pytest.approx(50.0)


def test_frame_signal_too_short():
    with pytest.raises(ValueError, match="too short"):
        frame_signal(np.zeros(100), n_fft=400, hop=320)


def test_frame_signal_hop_indexing():
    x = np.arange(1000, dtype=np.float64)
    frames = frame_signal(x, n_fft=400, hop=320)
    assert frames.shape == (2, 400)
    assert frames[1, 0] == 320.0


def test_translation_covariance(rng):
    wave = rng.uniform(-0.5, 0.5, 16000)
    a = log_mel(Waveform(samples=wave)).data
    b = log_mel(Waveform(samples=wave[320:])).data
    assert np.allclose(a[1:], b[: a.shape[0] - 1], atol=1e-5)


# -- log-mel content ------------------------------------------------------------------


def test_all_zero_input_hits_log_floor():
    z = log_mel(Waveform(samples=np.zeros(16000)))
    assert np.allclose(z.data, np.log(LOG_FLOOR), atol=1e-6)


def test_pure_tone_lands_in_matching_mel_bin():
    cfg = FeaturizerConfig()
    z = log_mel(make_sine(1000.0), cfg)
    got = int(np.bincount(np.argmax(z.data, axis=1)).argmax())

    # independent oracle: naive DFT + the same triangular bank on a clean frame
    w = make_sine(1000.0)
    frame = w.samples[:512] * np.hstack([np.hanning(400), np.zeros(112)])
    power = np.abs(naive_dft(frame)) ** 2
    fb = mel_filterbank(cfg.n_mels, 257, 16000, cfg.fmin, cfg.fmax)
    expect = int(np.argmax(fb @ power))
    assert got == expect

    # and that bin's triangle straddles 1 kHz
    bin_freqs = np.arange(257) * 16000 / 512.0
    support = bin_freqs[fb[got] > 0]
    assert support.min() <= 1000.0 <= support.max()


def test_mel_filterbank_shape_and_bounds():
    fb = mel_filterbank(40, 257, 16000, 0.0, 8000.0)
    assert fb.shape == (40, 257)
    assert fb.min() >= 0.0 and fb.max() <= 1.0 + 1e-12
    assert np.all(fb.max(axis=1) > 0)  # no silent filter


def test_featurizer_config_validation():
    with pytest.raises(ValueError):
        FeaturizerConfig(n_fft=256, hop=512)
    with pytest.raises(ValueError):
        FeaturizerConfig(n_mels=1)
    with pytest.raises(ValueError):
        mel_filterbank(40, 257, 16000, 0.0, 9000.0)
