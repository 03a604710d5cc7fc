"""Gaussian-window spectrogram and clip-averaged MFCCs."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.fft import dct, rfft


class SignalTooShortError(ValueError):
    pass


@dataclass
class SpectralConfig:
    spec_window_seconds: float = 0.0116
    spec_overlap_fraction: float = 0.90
    mfcc_window_seconds: float = 0.025
    mfcc_overlap_fraction: float = 0.40
    n_mfcc: int = 12
    n_mel_filters: int = 26
    fmin: float = 0.0
    fmax: float | None = None  # None -> Nyquist
    log_floor: float = 1e-10
    spectrogram_db: bool = False

    def __post_init__(self):
        for name in ("spec_overlap_fraction", "mfcc_overlap_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.n_mfcc > self.n_mel_filters:
            raise ValueError("n_mfcc cannot exceed n_mel_filters")

    def spec_frame(self, sample_rate):
        """Window length and hop (samples) for the persistence spectrogram."""
        return _frame_params(self.spec_window_seconds, self.spec_overlap_fraction, sample_rate)

    def mfcc_frame(self, sample_rate):
        return _frame_params(self.mfcc_window_seconds, self.mfcc_overlap_fraction, sample_rate)

    def to_dict(self):
        return asdict(self)


def _frame_params(seconds, overlap, sample_rate):
    length = int(round(seconds * sample_rate))
    if length < 2:
        raise ValueError(f"window of {seconds} s at {sample_rate} Hz is shorter than 2 samples")
    hop = max(1, int(np.floor(length * (1.0 - overlap) + 1e-9)))
    return length, hop


def gaussian_window(length: int) -> np.ndarray:
    """Symmetric Gaussian window with sigma = length / 6."""
    sigma = length / 6.0
    n = np.arange(length) - (length - 1) / 2.0
    return np.exp(-0.5 * (n / sigma) ** 2)


def frame_signal(x: np.ndarray, length: int, hop: int) -> np.ndarray:
    """Slice ``x`` into ``(n_frames, length)`` frames; the last partial frame is dropped."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if len(x) < length:
        raise SignalTooShortError(f"signal of {len(x)} samples is shorter than one {length}-sample window")
    n_frames = 1 + (len(x) - length) // hop
    return np.lib.stride_tricks.sliding_window_view(x, length)[::hop][:n_frames]


@dataclass
class Spectrogram:
    values: np.ndarray  # (n_frames, n_bins), power
    time_step: float
    freq_step: float

    @property
    def shape(self):
        return self.values.shape


def spectrogram(clip, cfg: SpectralConfig | None = None) -> Spectrogram:
    """Power spectrogram ``|STFT|**2`` with a Gaussian window and no zero-padding."""
    cfg = cfg or SpectralConfig()
    length, hop = cfg.spec_frame(clip.sample_rate)
    frames = frame_signal(clip.samples, length, hop) * gaussian_window(length)
    power = np.abs(rfft(frames, n=length, axis=1)) ** 2
    if cfg.spectrogram_db:
        power = 10.0 * np.log10(np.maximum(power, cfg.log_floor))
        power -= power.min()
    return Spectrogram(power, hop / clip.sample_rate, clip.sample_rate / length)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters, n_fft, sample_rate, fmin=0.0, fmax=None) -> np.ndarray:
    """Triangular filters on the rfft bin grid, shape ``(n_filters, n_fft // 2 + 1)``.

    Filter edges are placed evenly on the mel scale and evaluated at the exact
    bin frequencies, so narrow low-frequency filters never collapse to zero width.
    """
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc_frames(clip, cfg: SpectralConfig | None = None) -> np.ndarray:
    """Per-frame MFCCs 1..n_mfcc (c0 dropped), shape ``(n_frames, n_mfcc)``."""
    cfg = cfg or SpectralConfig()
    length, hop = cfg.mfcc_frame(clip.sample_rate)
    frames = frame_signal(clip.samples, length, hop) * np.hamming(length)
    power = np.abs(rfft(frames, n=length, axis=1)) ** 2 / length
    fb = mel_filterbank(cfg.n_mel_filters, length, clip.sample_rate, cfg.fmin, cfg.fmax)
    log_energy = np.log(np.maximum(power @ fb.T, cfg.log_floor))
    cep = dct(log_energy, type=2, axis=1, norm="ortho")
    return cep[:, 1 : cfg.n_mfcc + 1]


def mfcc_mean(clip, cfg: SpectralConfig | None = None) -> np.ndarray:
    return mfcc_frames(clip, cfg).mean(axis=0)
