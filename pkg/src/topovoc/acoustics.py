"""Per-clip acoustic descriptors used to profile clusters.

Every descriptor is computed on 40 ms frames with a 10 ms hop and then
aggregated over the clip. Pitch, formants and FM are NaN when no frame is
voiced.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.fft import irfft, rfft, next_fast_len
from scipy.linalg import solve_toeplitz
from scipy.signal import resample_poly

from .spectral import frame_signal

FRAME_SECONDS = 0.040
HOP_SECONDS = 0.010
F0_MIN, F0_MAX = 100.0, 1000.0
YIN_THRESHOLD = 0.1
VOICING_CONFIDENCE = 0.5
SILENCE_DB = -60.0
LPC_RATE = 16000
LPC_ORDER = 18
FORMANT_MAX_BANDWIDTH = 700.0
FORMANT_RANGE = (200.0, 8000.0)
FM_BAND = (0.5, 20.0)
FLAT_CONTOUR = 1e-4  # relative F0 wobble below which a contour counts as unmodulated
LOUDNESS_CAL_DB = 93.0  # level of a unit mean-square signal, dB SPL
BARK_EDGES = np.array([
    0, 100, 200, 300, 400, 510, 630, 770, 920, 1080, 1270, 1480, 1720, 2000,
    2320, 2700, 3150, 3700, 4400, 5300, 6400, 7700, 9500, 12000, 15500, 22050,
], dtype=np.float64)
ROUGHNESS_PEAKS = 24
ROUGHNESS_FLOOR_DB = -40.0

PROFILE_COLUMNS = ("duration", "pitch", "f1", "f2", "f3", "voiced", "sc", "entropy", "hnr", "fm", "loudness", "roughness")


class ClipTooShortError(ValueError):
    pass


@dataclass
class AcousticProfile:
    duration: float
    pitch: float
    f1: float
    f2: float
    f3: float
    voiced: float
    sc: float
    entropy: float
    hnr: float
    fm: float
    loudness: float
    roughness: float

    def as_array(self):
        return np.array([getattr(self, c) for c in PROFILE_COLUMNS], dtype=np.float64)


# ---------------------------------------------------------------------------
# pitch


def yin_track(frames, sample_rate, fmin=F0_MIN, fmax=F0_MAX, threshold=YIN_THRESHOLD):
    """YIN on each row of ``frames``.

    Returns ``(f0, confidence, lag)``; confidence is ``1 - d'(lag)`` for the
    cumulative-mean-normalised difference ``d'``.
    """
    n_frames, W = frames.shape
    tau_min = max(2, int(math.floor(sample_rate / fmax)))
    tau_max = int(math.ceil(sample_rate / fmin))
    w = W - tau_max - 1
    if w < tau_max // 2:
        raise ClipTooShortError("frame too short for the pitch search range")
    nfft = next_fast_len(W + w)
    head = frames[:, :w]
    r = irfft(np.conj(rfft(head, nfft, axis=1)) * rfft(frames, nfft, axis=1), nfft, axis=1)[:, : tau_max + 2]
    sq = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(frames**2, axis=1)], axis=1)
    taus = np.arange(tau_max + 2)
    e1 = sq[:, w][:, None]
    e2 = sq[:, taus + w] - sq[:, taus]
    d = np.maximum(e1 + e2 - 2 * r, 0.0)
    d[:, 0] = 0.0
    cum = np.cumsum(d[:, 1:], axis=1)
    dn = np.ones_like(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        dn[:, 1:] = np.where(cum > 0, d[:, 1:] * taus[1:] / cum, 1.0)

    f0 = np.full(n_frames, np.nan)
    conf = np.zeros(n_frames)
    lags = np.zeros(n_frames)
    for i in range(n_frames):
        row = dn[i]
        seg = row[tau_min : tau_max + 1]
        below = np.flatnonzero(seg < threshold)
        if len(below):
            t = tau_min + below[0]
            while t + 1 <= tau_max and row[t + 1] < row[t]:
                t += 1
        else:
            t = tau_min + int(np.argmin(seg))
        conf[i] = 1.0 - row[t]
        a, b, c = row[t - 1], row[t], row[t + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        lags[i] = t + float(np.clip(shift, -1, 1))
        f0[i] = sample_rate / lags[i]
    return f0, conf, lags


def _hnr_frame(frame, lag):
    """Harmonicity in dB from the normalised autocorrelation peak near ``lag``."""
    t0 = int(round(lag))
    vals = []
    for t in (t0 - 1, t0, t0 + 1):
        if t < 1 or t >= len(frame) - 1:
            return float("nan")
        a, b = frame[:-t], frame[t:]
        den = math.sqrt(float(a @ a) * float(b @ b))
        vals.append(float(a @ b) / den if den > 0 else 0.0)
    y0, y1, y2 = vals
    denom = y0 - 2 * y1 + y2
    peak = y1
    if denom < 0:
        shift = 0.5 * (y0 - y2) / denom
        if abs(shift) <= 1:
            peak = y1 - 0.25 * (y0 - y2) * shift
    r = min(max(peak, 1e-9), 1 - 1e-9)
    return 10.0 * math.log10(r / (1 - r))


# ---------------------------------------------------------------------------
# formants


def lpc(frame, order):
    """LPC polynomial ``[1, a1, ..., ap]`` by the autocorrelation method."""
    r = np.correlate(frame, frame, mode="full")[len(frame) - 1 : len(frame) + order]
    if r[0] <= 0:
        return None
    r = r.copy()
    r[0] *= 1.0 + 1e-9
    a = solve_toeplitz(r[:order], -r[1 : order + 1])
    return np.concatenate([[1.0], a])


def formants_from_lpc(a, sample_rate):
    roots = np.roots(a)
    roots = roots[np.imag(roots) > 0]
    freqs = np.angle(roots) * sample_rate / (2 * np.pi)
    bws = -np.log(np.abs(roots)) * sample_rate / np.pi
    keep = (bws < FORMANT_MAX_BANDWIDTH) & (freqs > FORMANT_RANGE[0]) & (freqs < FORMANT_RANGE[1])
    return np.sort(freqs[keep])


def _resample(x, sr_from, sr_to):
    if sr_from == sr_to:
        return x
    frac = Fraction(sr_to, sr_from).limit_denominator(1000)
    return resample_poly(x, frac.numerator, frac.denominator)


def formant_tracks(x, sample_rate, voiced_mask):
    """Median F1-F3 over voiced frames that yield at least three formants."""
    y = _resample(np.asarray(x, dtype=np.float64), sample_rate, LPC_RATE)
    L = int(round(FRAME_SECONDS * LPC_RATE))
    hop = int(round(HOP_SECONDS * LPC_RATE))
    if len(y) < L:
        return (np.nan,) * 3
    y = np.append(y[0], y[1:] - 0.97 * y[:-1])
    frames = frame_signal(y, L, hop) * np.hamming(L)
    n = min(len(frames), len(voiced_mask))
    found = []
    for i in np.flatnonzero(voiced_mask[:n]):
        a = lpc(frames[i], LPC_ORDER)
        if a is None or not np.all(np.isfinite(a)):
            continue
        f = formants_from_lpc(a, LPC_RATE)
        if len(f) >= 3:
            found.append(f[:3])
    if not found:
        return (np.nan,) * 3
    return tuple(float(v) for v in np.median(np.asarray(found), axis=0))


# ---------------------------------------------------------------------------
# spectral descriptors


def spectral_centroid(mag, freqs):
    return float(np.sum(freqs * mag) / np.sum(mag))


def normalized_spectral_entropy(power):
    p = power / power.sum()
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)) / np.log(len(power)))


def _plomp_levelt(f_lo, f_hi):
    s = 0.24 / (0.021 * f_lo + 19.0)
    x = s * (f_hi - f_lo)
    return np.exp(-3.5 * x) - np.exp(-5.75 * x)


_PL_MAX = math.exp(-3.5 * math.log(5.75 / 3.5) / 2.25) - math.exp(-5.75 * math.log(5.75 / 3.5) / 2.25)


def frame_roughness(mag, freqs):
    """Pairwise sensory dissonance of spectral peaks, as a percentage.

    Peaks within ``ROUGHNESS_FLOOR_DB`` of the frame maximum are paired and
    weighted by their magnitude product; the total is divided by the largest
    value the same peak amplitudes could reach.
    """
    inner = (mag[1:-1] > mag[:-2]) & (mag[1:-1] >= mag[2:])
    idx = np.flatnonzero(inner) + 1
    if len(idx) < 2:
        return 0.0
    floor = mag.max() * 10 ** (ROUGHNESS_FLOOR_DB / 20)
    idx = idx[mag[idx] >= floor]
    if len(idx) < 2:
        return 0.0
    idx = idx[np.argsort(mag[idx])[::-1][:ROUGHNESS_PEAKS]]
    a, f = mag[idx], freqs[idx]
    i, j = np.triu_indices(len(idx), 1)
    lo, hi = np.minimum(f[i], f[j]), np.maximum(f[i], f[j])
    diss = np.sum(a[i] * a[j] * _plomp_levelt(lo, hi))
    return float(100.0 * diss / (_PL_MAX * 0.5 * a.sum() ** 2))


def frame_loudness(power_ms, freqs):
    """Sum over Bark bands of ``2 ** ((L_band - 40) / 10)`` sone (Stevens' power law)."""
    total = 0.0
    for lo, hi in zip(BARK_EDGES[:-1], BARK_EDGES[1:]):
        band = power_ms[(freqs >= lo) & (freqs < hi)].sum()
        if band > 0:
            level = 10 * math.log10(band) + LOUDNESS_CAL_DB
            total += 2.0 ** ((level - 40.0) / 10.0)
    return total


def modulation_rate(f0, frame_rate, band=FM_BAND, min_frames=10):
    """Dominant frequency of the detrended voiced-F0 contour.

    NaN with fewer than ``min_frames`` voiced frames, 0 for a flat contour.
    """
    voiced = np.flatnonzero(np.isfinite(f0))
    if len(voiced) < min_frames:
        return float("nan")
    span = np.arange(voiced[0], voiced[-1] + 1)
    contour = np.interp(span, voiced, f0[voiced])
    t = np.arange(len(contour))
    level = float(np.mean(np.abs(contour)))
    contour = contour - np.polyval(np.polyfit(t, contour, 1), t)
    if np.sqrt(np.mean(contour**2)) < FLAT_CONTOUR * level:
        return 0.0
    nfft = max(4096, next_fast_len(8 * len(contour)))
    spec = np.abs(rfft(contour * np.hanning(len(contour)), nfft))
    freqs = np.arange(len(spec)) * frame_rate / nfft
    sel = np.flatnonzero((freqs >= band[0]) & (freqs <= band[1]))
    if len(sel) == 0 or spec[sel].max() <= 0:
        return float("nan")
    k = sel[np.argmax(spec[sel])]
    if 0 < k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        if denom < 0:
            return float((k + 0.5 * (a - c) / denom) * frame_rate / nfft)
    return float(freqs[k])


# ---------------------------------------------------------------------------


def profile(clip) -> AcousticProfile:
    """Compute the twelve descriptors for one clip (needs at least 100 ms)."""
    x = np.asarray(clip.samples, dtype=np.float64)
    sr = clip.sample_rate
    duration = len(x) / sr
    if duration < 0.1:
        raise ClipTooShortError(f"clip {getattr(clip, 'id', '')} lasts {duration:.3f} s < 0.1 s")
    L = int(round(FRAME_SECONDS * sr))
    hop = int(round(HOP_SECONDS * sr))
    if len(x) < L:
        raise ClipTooShortError("clip shorter than one analysis frame")
    frames = frame_signal(x, L, hop)
    rms = np.sqrt(np.mean(frames**2, axis=1))
    if rms.max() == 0:
        active = np.zeros(len(frames), dtype=bool)
    else:
        active = rms > rms.max() * 10 ** (SILENCE_DB / 20)

    f0, conf, lags = yin_track(frames, sr)
    voiced = active & (conf >= VOICING_CONFIDENCE)
    f0v = np.where(voiced, f0, np.nan)

    win = np.hanning(L)
    spec = rfft(frames * win, axis=1)
    mag = np.abs(spec)
    power = mag**2
    freqs = np.arange(mag.shape[1]) * sr / L
    power_ms = 2.0 * power / (L * np.sum(win**2))

    # an active frame can still be zero after windowing when its energy sits at the edges
    act = np.flatnonzero(active & (power.sum(axis=1) > 0))
    if len(act):
        sc = float(np.mean([spectral_centroid(mag[i], freqs) for i in act]))
        entropy = float(np.mean([normalized_spectral_entropy(power[i]) for i in act]))
        rough = float(np.mean([frame_roughness(mag[i], freqs) for i in act]))
        hnr_frames = np.flatnonzero(voiced) if voiced.any() else act
        hnr = float(np.nanmean([_hnr_frame(frames[i], lags[i]) for i in hnr_frames]))
    else:
        sc = entropy = rough = hnr = float("nan")
    loud = float(np.mean([frame_loudness(power_ms[i], freqs) for i in range(len(frames))]))

    if voiced.any():
        pitch = float(np.median(f0[voiced]))
        f1, f2, f3 = formant_tracks(x, sr, voiced)
        fm = modulation_rate(f0v, 1.0 / HOP_SECONDS)
    else:
        pitch = f1 = f2 = f3 = fm = float("nan")

    return AcousticProfile(
        duration=duration,
        pitch=pitch,
        f1=f1,
        f2=f2,
        f3=f3,
        voiced=100.0 * float(np.mean(voiced)),
        sc=sc,
        entropy=entropy,
        hnr=hnr,
        fm=fm,
        loudness=loud,
        roughness=rough,
    )


def write_profiles_csv(path, rows) -> None:
    """``rows`` is an iterable of ``(clip_id, cluster, AcousticProfile)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cluster", *PROFILE_COLUMNS])
        for clip_id, cluster, prof in rows:
            w.writerow([clip_id, cluster, *(repr(float(v)) for v in prof.as_array())])
