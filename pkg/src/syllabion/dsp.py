"""Speaker perturbation: formant shift, pitch randomization, frequency shaping.

The perturbation chain routes by estimated pitch (female-to-male above the
threshold, male-to-female at or below), then applies

  1. a global spectral shift by the formant ratio (windowed-sinc resample
     followed by WSOLA to restore duration),
  2. a pitch-synchronous overlap-add stage that moves the pitch median to the
     branch target and scales log-f0 excursions by the range factor while
     leaving the spectral envelope where step 1 put it,
  3. a cascade of randomized shelving/peaking biquads.

All stages preserve the exact sample count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .io import Waveform

VOICED_FMIN = 50.0
VOICED_FMAX = 600.0

M2F_PARAMS = (1.1, 300.0, 1.2)
F2M_PARAMS = (1.0 / 1.1, 100.0, 1.0 / 1.2)


class UnvoicedUtteranceError(ValueError):
    """No voiced frames were found where a pitch statistic is required."""


@dataclass(frozen=True)
class PerturbParams:
    formant_shift_ratio: float
    target_pitch_median: float
    pitch_range_factor: float

    def __post_init__(self):
        if min(self.formant_shift_ratio, self.target_pitch_median, self.pitch_range_factor) <= 0:
            raise ValueError("perturbation parameters must be strictly positive")
        if not (0.5 <= self.formant_shift_ratio <= 2.0):
            raise ValueError("formant_shift_ratio must lie in [0.5, 2.0]")


@dataclass(frozen=True)
class PitchTrack:
    """Per-frame f0 in Hz; 0 encodes unvoiced."""

    values: np.ndarray
    hop: float = 0.01

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if np.any(values < 0):
            raise ValueError("f0 values must be >= 0")
        voiced = values[values > 0]
        if voiced.size and (voiced.min() < VOICED_FMIN or voiced.max() > VOICED_FMAX):
            raise ValueError("voiced f0 outside the trackable range")
        object.__setattr__(self, "values", values)

    @property
    def voiced(self) -> np.ndarray:
        return self.values[self.values > 0]


# ---------------------------------------------------------------------------
# pitch estimation (YIN)
# ---------------------------------------------------------------------------


def estimate_pitch(
    w: Waveform,
    hop_s: float = 0.01,
    frame_s: float = 0.032,
    dip_threshold: float = 0.15,
    voiced_threshold: float = 0.35,
) -> PitchTrack:
    """Autocorrelation-difference (YIN) f0 track on a 10 ms hop.

    Frames whose normalized difference never dips below ``voiced_threshold``,
    or whose RMS is negligible, are marked unvoiced (f0 = 0).
    """
    if len(w) == 0:
        raise ValueError("waveform is empty")
    if w.sample_rate < 8000:
        raise ValueError("sample rate must be >= 8000 Hz for pitch tracking")
    sr = w.sample_rate
    hop = max(1, int(round(hop_s * sr)))
    win = int(round(frame_s * sr))
    tau_min = max(2, int(sr / VOICED_FMAX))
    tau_max = int(np.ceil(sr / VOICED_FMIN))
    span = win + tau_max

    x = w.samples
    n_frames = max(1, 1 + (len(x) - span) // hop) if len(x) >= span else 1
    padded = np.zeros(span + hop * (n_frames - 1))
    padded[: len(x)] = x[: len(padded)]
    idx = np.arange(span)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx]

    # d(tau) = E0 + E_tau - 2*C(tau), all terms vectorized across frames
    sq = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(frames**2, axis=1)], axis=1)
    taus = np.arange(tau_max + 1)
    energy = sq[:, taus + win] - sq[:, taus]
    nfft = 1 << int(span + win - 1).bit_length()
    spec = np.fft.rfft(frames, nfft, axis=1)
    spec_head = np.fft.rfft(frames[:, :win], nfft, axis=1)
    corr = np.fft.irfft(spec * np.conj(spec_head), nfft, axis=1)[:, : tau_max + 1]
    diff = energy[:, :1] + energy - 2.0 * corr
    diff = np.maximum(diff, 0.0)

    # cumulative-mean normalization; d'(0) = 1 by convention
    cum = np.cumsum(diff[:, 1:], axis=1)
    norm = np.ones_like(diff)
    with np.errstate(invalid="ignore", divide="ignore"):
        norm[:, 1:] = diff[:, 1:] * taus[1:] / np.where(cum > 0, cum, np.inf)

    rms = np.sqrt(np.mean(frames[:, :win] ** 2, axis=1))
    f0 = np.zeros(n_frames)
    for i in range(n_frames):
        if rms[i] < 1e-6:
            continue
        d = norm[i]
        below = np.nonzero(d[tau_min: tau_max + 1] < dip_threshold)[0]
        if below.size:
            tau = tau_min + below[0]
            while tau + 1 <= tau_max and d[tau + 1] < d[tau]:
                tau += 1
        else:
            tau = tau_min + int(np.argmin(d[tau_min: tau_max + 1]))
        if d[tau] >= voiced_threshold:
            continue
        if 0 < tau < tau_max:  # parabolic refinement
            a, b, c = d[tau - 1], d[tau], d[tau + 1]
            denom = a - 2 * b + c
            shift = 0.5 * (a - c) / denom if abs(denom) > 1e-12 else 0.0
            tau_hat = tau + np.clip(shift, -1.0, 1.0)
        else:
            tau_hat = float(tau)
        cand = sr / tau_hat
        if VOICED_FMIN <= cand <= VOICED_FMAX:
            f0[i] = cand
    return PitchTrack(values=f0, hop=hop / sr)


def median_voiced_pitch(pt: PitchTrack) -> float:
    """Median f0 over voiced frames (even counts use the midpoint mean)."""
    voiced = pt.voiced
    if voiced.size == 0:
        raise UnvoicedUtteranceError("unvoiced utterance")
    return float(np.median(voiced))


def mean_voiced_pitch(pt: PitchTrack) -> float:
    """Mean-statistic alternative to :func:`median_voiced_pitch`."""
    voiced = pt.voiced
    if voiced.size == 0:
        raise UnvoicedUtteranceError("unvoiced utterance")
    return float(np.mean(voiced))


def decide_conversion(
    pitch_stat: float,
    threshold: float = 155.0,
    m2f: tuple[float, float, float] = M2F_PARAMS,
    f2m: tuple[float, float, float] = F2M_PARAMS,
) -> PerturbParams:
    """Route to the conversion triple: strictly above the threshold goes
    female-to-male, at or below goes male-to-female."""
    if pitch_stat <= 0:
        raise ValueError("pitch statistic must be positive")
    triple = f2m if pitch_stat > threshold else m2f
    return PerturbParams(*triple)


# ---------------------------------------------------------------------------
# resampling and time-scale modification
# ---------------------------------------------------------------------------

_SINC_ZEROS = 16


def _resample_ratio(x: np.ndarray, ratio: float) -> np.ndarray:
    """Windowed-sinc resample to round(len * ratio) samples."""
    n = len(x)
    n_out = int(round(n * ratio))
    if n == 0 or n_out == 0:
        return np.zeros(n_out)
    cutoff = min(1.0, ratio)
    half = _SINC_ZEROS / cutoff
    reach = int(np.ceil(half))
    t = np.arange(n_out) / ratio
    base = np.floor(t).astype(np.int64)
    y = np.zeros(n_out)
    for k in range(-reach, reach + 2):
        src = base + k
        u = t - src
        valid = (src >= 0) & (src < n) & (np.abs(u) <= half)
        if not np.any(valid):
            continue
        taper = 0.5 + 0.5 * np.cos(np.pi * u[valid] / half)
        weights = cutoff * np.sinc(cutoff * u[valid]) * taper
        y[valid] += x[np.clip(src, 0, n - 1)][valid] * weights
    return y


def resample(w: Waveform, new_rate: int) -> Waveform:
    """Polyphase windowed-sinc resampling; len(out) = round(len * new/old)."""
    if new_rate <= 0:
        raise ValueError("new_rate must be positive")
    if new_rate == w.sample_rate:
        return Waveform(samples=w.samples.copy(), sample_rate=w.sample_rate)
    return Waveform(
        samples=_resample_ratio(w.samples, new_rate / w.sample_rate),
        sample_rate=int(new_rate),
    )


def _wsola(x: np.ndarray, factor: float, window: int = 512) -> np.ndarray:
    """Waveform-similarity overlap-add to round(len * factor) samples."""
    n = len(x)
    n_out = int(round(n * factor))
    if n == 0 or n_out == 0:
        return np.zeros(n_out)
    win = min(window, 2 * (n // 2))
    if win < 32:  # too short for overlap-add; nearest-neighbour stretch
        pos = np.minimum((np.arange(n_out) / factor).astype(np.int64), n - 1)
        return x[pos].copy()
    syn_hop = win // 2
    ana_hop = syn_hop / factor
    radius = win // 4
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)

    out = np.zeros(n_out + 2 * win)
    wsum = np.zeros(n_out + 2 * win)
    n_frames = int(np.ceil(n_out / syn_hop)) + 1
    prev = 0
    for m in range(n_frames):
        nominal = int(round(m * ana_hop))
        if m == 0:
            a = 0
        else:
            target = prev + syn_hop
            lo = max(0, nominal - radius)
            hi = min(max(n - win, 0), nominal + radius)
            if hi <= lo or target >= n:
                a = min(max(nominal, 0), max(n - win, 0))
            else:
                ref = x[target: target + win]
                if len(ref) < win:
                    ref = np.pad(ref, (0, win - len(ref)))
                seg = x[lo: hi + win]
                corr = np.correlate(seg, ref, mode="valid")
                a = lo + int(np.argmax(corr))
        frame = x[a: a + win]
        if len(frame) < win:
            frame = np.pad(frame, (0, win - len(frame)))
        pos = m * syn_hop
        out[pos: pos + win] += frame * hann
        wsum[pos: pos + win] += hann
        prev = a
    return out[:n_out] / np.maximum(wsum[:n_out], 1e-8)


def time_scale(w: Waveform, factor: float) -> Waveform:
    """WSOLA time-scale modification: new duration = factor * old, pitch kept."""
    if not (0.5 <= factor <= 2.0):
        raise ValueError("factor out of range [0.5, 2.0]")
    if factor == 1.0:
        return Waveform(samples=w.samples.copy(), sample_rate=w.sample_rate)
    return Waveform(samples=_wsola(w.samples, factor), sample_rate=w.sample_rate)


def _fix_length(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) >= n:
        return x[:n]
    return np.pad(x, (0, n - len(x)))


# ---------------------------------------------------------------------------
# pitch-synchronous overlap-add
# ---------------------------------------------------------------------------


def _per_sample_f0(track: PitchTrack, sr: int, n: int) -> np.ndarray:
    """Interpolate voiced frame f0 to one value per sample (edges held)."""
    times = (np.arange(len(track.values)) * track.hop + 0.016) * sr
    voiced_mask = track.values > 0
    vt = times[voiced_mask]
    vf = track.values[voiced_mask]
    if vt.size == 0:
        raise UnvoicedUtteranceError("unvoiced utterance")
    return np.interp(np.arange(n), vt, vf)


def _psola(x: np.ndarray, sr: int, f0_src: np.ndarray, f0_des: np.ndarray) -> np.ndarray:
    """Re-space pitch-synchronous grains from the source contour onto the
    desired contour; grain spectra (hence the envelope) are untouched.

    Grains span two analysis periods; overlap density is compensated by
    min(1, T_syn/T_ana) so raising the pitch does not pile up amplitude.
    No window-sum renormalization: the new grain spacing IS the new period.
    """
    n = len(x)
    marks_a = []
    t = 0.0
    while t < n:
        marks_a.append(t)
        t += sr / f0_src[min(int(t), n - 1)]
    marks_a = np.asarray(marks_a)

    out = np.zeros(n)
    s = 0.0
    while s < n:
        i = int(np.clip(np.searchsorted(marks_a, s), 0, len(marks_a) - 1))
        if i > 0 and abs(marks_a[i - 1] - s) < abs(marks_a[i] - s):
            i -= 1
        center = int(round(marks_a[i]))
        period_a = sr / f0_src[min(center, n - 1)]
        period_s = sr / f0_des[min(int(s), n - 1)]
        half = max(2, int(round(period_a)))
        grain_idx = np.arange(-half, half + 1)
        src_idx = center + grain_idx
        ok = (src_idx >= 0) & (src_idx < n)
        grain = np.zeros(2 * half + 1)
        grain[ok] = x[src_idx[ok]]
        hann = 0.5 - 0.5 * np.cos(2 * np.pi * (grain_idx + half) / (2 * half))
        gain = min(1.0, period_s / period_a)
        dst = int(round(s)) + grain_idx
        ok = (dst >= 0) & (dst < n)
        out[dst[ok]] += (grain * hann * gain)[ok]
        s += period_s
    return out


def shift_pitch_and_formants(w: Waveform, p: PerturbParams, measured_median: float) -> Waveform:
    """Scale the spectral envelope by the formant ratio and move the pitch
    contour to the target median with log-excursions scaled by the range
    factor. Output sample count equals the input exactly."""
    if measured_median <= 0:
        raise ValueError("measured_median must be positive")
    n = len(w)
    sr = w.sample_rate
    rho = p.formant_shift_ratio

    y = w.samples
    if abs(rho - 1.0) > 1e-9:
        # resample + relabel plays rho x faster (all frequencies scaled by
        # rho), WSOLA restores the original duration
        squeezed = _resample_ratio(y, 1.0 / rho)
        y = _fix_length(_wsola(squeezed, n / max(1, len(squeezed))), n)

    track = estimate_pitch(Waveform(samples=y, sample_rate=sr))
    if track.voiced.size == 0:
        raise UnvoicedUtteranceError("unvoiced utterance")
    med = median_voiced_pitch(track)
    f0_src = _per_sample_f0(track, sr, n)
    f0_des = p.target_pitch_median * np.exp(p.pitch_range_factor * (np.log(f0_src) - np.log(med)))
    f0_des = np.clip(f0_des, 40.0, 1000.0)
    out = _psola(y, sr, f0_src, f0_des)
    return Waveform(samples=_fix_length(out, n), sample_rate=sr)


# ---------------------------------------------------------------------------
# random frequency shaping
# ---------------------------------------------------------------------------


def _biquad_peaking(freq, fs, gain_db, q=1.0):
    a_lin = 10.0 ** (gain_db / 40.0)
    w0 = 2 * np.pi * freq / fs
    alpha = np.sin(w0) / (2 * q)
    b = np.array([1 + alpha * a_lin, -2 * np.cos(w0), 1 - alpha * a_lin])
    a = np.array([1 + alpha / a_lin, -2 * np.cos(w0), 1 - alpha / a_lin])
    return b / a[0], a / a[0]


def _biquad_shelf(freq, fs, gain_db, high: bool, slope=1.0):
    a_lin = 10.0 ** (gain_db / 40.0)
    w0 = 2 * np.pi * freq / fs
    cw = np.cos(w0)
    alpha = np.sin(w0) / 2 * np.sqrt((a_lin + 1 / a_lin) * (1 / slope - 1) + 2)
    sq = 2 * np.sqrt(a_lin) * alpha
    sign = 1.0 if high else -1.0
    b = a_lin * np.array(
        [(a_lin + 1) + sign * (a_lin - 1) * cw + sq,
         -2 * sign * ((a_lin - 1) + sign * (a_lin + 1) * cw),
         (a_lin + 1) + sign * (a_lin - 1) * cw - sq]
    )
    a = np.array(
        [(a_lin + 1) - sign * (a_lin - 1) * cw + sq,
         2 * sign * ((a_lin - 1) - sign * (a_lin + 1) * cw),
         (a_lin + 1) - sign * (a_lin - 1) * cw - sq]
    )
    return b / a[0], a / a[0]


def biquad_response(b, a, freqs, fs) -> np.ndarray:
    """Analytic |H(e^jw)| of one biquad at the given frequencies."""
    z = np.exp(-2j * np.pi * np.asarray(freqs) / fs)
    num = b[0] + b[1] * z + b[2] * z**2
    den = a[0] + a[1] * z + a[2] * z**2
    return np.abs(num / den)


def draw_shaping_filters(sample_rate: int, rng: np.random.Generator, gain_db: float = 6.0):
    """Default bank: low shelf at 250 Hz, high shelf at 4 kHz, two peaking
    filters with log-uniform centers in [200, 6000] Hz, gains in +-gain_db."""
    filters = [
        _biquad_shelf(250.0, sample_rate, rng.uniform(-gain_db, gain_db), high=False),
        _biquad_shelf(4000.0, sample_rate, rng.uniform(-gain_db, gain_db), high=True),
    ]
    for _ in range(2):
        center = float(np.exp(rng.uniform(np.log(200.0), np.log(6000.0))))
        filters.append(_biquad_peaking(center, sample_rate, rng.uniform(-gain_db, gain_db)))
    return filters


def random_frequency_shaping(w: Waveform, rng_seed: int, gain_db: float = 6.0, filters=None) -> Waveform:
    """Apply a randomized biquad cascade; length is unchanged and the output
    RMS is clamped into [-gain_db, +gain_db] relative to the input."""
    rng = np.random.default_rng(rng_seed)
    if filters is None:
        filters = draw_shaping_filters(w.sample_rate, rng, gain_db)
    y = w.samples.copy()
    for b, a in filters:
        y = lfilter(b, a, y)
    rms_in = float(np.sqrt(np.mean(w.samples**2))) if len(w) else 0.0
    rms_out = float(np.sqrt(np.mean(y**2))) if len(w) else 0.0
    if rms_in > 0 and rms_out > 0:
        bound = 10.0 ** (gain_db / 20.0)
        ratio = rms_out / rms_in
        if ratio > bound:
            y *= bound / ratio
        elif ratio < 1.0 / bound:
            y *= 1.0 / (bound * ratio)
    return Waveform(samples=y, sample_rate=w.sample_rate)


# ---------------------------------------------------------------------------
# full perturbation
# ---------------------------------------------------------------------------


def perturb_speaker(
    w: Waveform,
    threshold: float = 155.0,
    rng_seed: int = 0,
    gain_db: float = 6.0,
    m2f: tuple[float, float, float] = M2F_PARAMS,
    f2m: tuple[float, float, float] = F2M_PARAMS,
    pitch_stat: str = "median",
) -> Waveform:
    """Full speaker perturbation; unvoiced utterances only get the shaping
    stage so the training pipeline never fails on silence."""
    if len(w) == 0:
        raise ValueError("waveform is empty")
    n = len(w)
    track = estimate_pitch(w)
    if track.voiced.size == 0:
        shaped = random_frequency_shaping(w, rng_seed, gain_db)
        return Waveform(samples=_fix_length(shaped.samples, n), sample_rate=w.sample_rate)
    stat = median_voiced_pitch(track) if pitch_stat == "median" else mean_voiced_pitch(track)
    params = decide_conversion(stat, threshold, m2f, f2m)
    shifted = shift_pitch_and_formants(w, params, stat)
    shaped = random_frequency_shaping(shifted, rng_seed, gain_db)
    return Waveform(samples=_fix_length(shaped.samples, n), sample_rate=w.sample_rate)
