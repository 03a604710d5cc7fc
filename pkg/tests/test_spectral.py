import numpy as np
import pytest

from topovoc.corpus_io import AudioClip
from topovoc.spectral import (
    SignalTooShortError,
    SpectralConfig,
    gaussian_window,
    mel_filterbank,
    mfcc_mean,
    spectrogram,
)


def clip(x, sr=44100):
    return AudioClip(np.asarray(x, dtype=np.float64), sr, 1, "t", "")


def test_frame_geometry_at_corpus_rate():
    cfg = SpectralConfig()
    assert cfg.spec_frame(44100) == (512, 51)
    spec = spectrogram(clip(np.zeros(44100)), cfg)
    assert spec.values.shape[1] == 257
    assert spec.values.shape[0] == (44100 - 512) // 51 + 1
    assert spec.time_step == pytest.approx(51 / 44100)
    assert spec.freq_step == pytest.approx(44100 / 512)


def test_gaussian_window_sigma_and_symmetry():
    w = gaussian_window(512)
    n = np.arange(512) - 511 / 2
    np.testing.assert_allclose(w, np.exp(-0.5 * (n / (512 / 6)) ** 2))
    np.testing.assert_allclose(w, w[::-1])


def test_sine_peaks_at_nearest_bin():
    sr = 44100
    t = np.arange(sr) / sr
    spec = spectrogram(clip(np.sin(2 * np.pi * 1000 * t)))
    expected = int(round(1000 / spec.freq_step))
    assert np.all(np.argmax(spec.values[1:-1], axis=1) == expected)


def test_zero_clip_gives_zero_spectrogram():
    assert not np.any(spectrogram(clip(np.zeros(2000))).values)


def test_too_short_clip_rejected():
    with pytest.raises(SignalTooShortError):
        spectrogram(clip(np.zeros(100)))
    with pytest.raises(SignalTooShortError):
        mfcc_mean(clip(np.zeros(500)))


def test_energy_scales_with_gain_squared():
    x = np.random.default_rng(0).normal(size=5000)
    a = spectrogram(clip(x)).values.sum()
    b = spectrogram(clip(3.0 * x)).values.sum()
    assert b == pytest.approx(9.0 * a, rel=1e-12)


def test_time_reversal_reverses_spectrogram():
    sr = 44100
    L, hop = SpectralConfig().spec_frame(sr)
    n = L + 40 * hop  # frames tile the clip exactly, so reversal maps frames onto frames
    x = np.random.default_rng(2).normal(size=n)
    fwd = spectrogram(clip(x)).values
    rev = spectrogram(clip(x[::-1])).values
    np.testing.assert_allclose(rev, fwd[::-1], rtol=1e-9, atol=1e-9)


def test_mfcc_length_is_twelve():
    for n in (2000, 44100, 90000):
        assert mfcc_mean(clip(np.random.default_rng(n).normal(size=n))).shape == (12,)


def test_mfcc_self_concatenation():
    sr = 44100
    L, hop = SpectralConfig().mfcc_frame(sr)
    period = hop  # periodic signal whose period equals the hop: every frame is identical
    base = np.random.default_rng(5).normal(size=period)
    x = np.tile(base, 6)
    a = mfcc_mean(clip(x))
    b = mfcc_mean(clip(np.concatenate([x, x])))
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_noise_and_sawtooth_differ():
    sr = 44100
    t = np.arange(sr) / sr
    saw = 2 * ((300 * t) % 1.0) - 1
    noise = np.random.default_rng(0).normal(size=sr)
    assert np.linalg.norm(mfcc_mean(clip(saw)) - mfcc_mean(clip(noise))) > 0


def test_mel_filterbank_shape_and_support():
    fb = mel_filterbank(26, 1102, 44100)
    assert fb.shape == (26, 552)
    assert np.all(fb >= 0)
    assert np.all(fb.max(axis=1) > 0)


def test_config_validation():
    with pytest.raises(ValueError):
        SpectralConfig(spec_overlap_fraction=1.0)
    with pytest.raises(ValueError):
        SpectralConfig(n_mfcc=30, n_mel_filters=26)
