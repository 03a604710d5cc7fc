"""Synthetic vocalisation corpus for smoke tests and demos.

Three families with distinct spectral and temporal structure:

* ``sweep``: linear chirp between two random frequencies,
* ``noise``: bursts of white noise under a gated envelope,
* ``am``: a pure tone under sinusoidal amplitude modulation.

Clips are spread over three months independently of family.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus_io import Manifest, ManifestEntry, write_manifest, write_wav

FAMILIES = ("sweep", "noise", "am")


def _fade(x, sr, seconds=0.01):
    n = min(int(seconds * sr), len(x) // 2)
    ramp = np.linspace(0.0, 1.0, n)
    x[:n] *= ramp
    x[len(x) - n :] *= ramp[::-1]
    return x


def _floor(rng, n, level=3e-3):
    """Faint broadband background so tonal clips are not spectrally empty."""
    return rng.normal(0.0, level, n)


def sine_sweep(rng, sr, duration):
    t = np.arange(int(duration * sr)) / sr
    f0, f1 = rng.uniform(500, 700), rng.uniform(2800, 3200)
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / duration * t**2)
    return _fade(0.8 * np.sin(phase) + _floor(rng, len(t)), sr)


def noise_burst(rng, sr, duration):
    n = int(duration * sr)
    x = rng.normal(0.0, 0.3, n)
    rate = rng.uniform(6, 12)
    gate = (np.sin(2 * np.pi * rate * np.arange(n) / sr + rng.uniform(0, 2 * np.pi)) > -0.2).astype(float)
    return _fade(x * gate, sr)


def am_tone(rng, sr, duration):
    t = np.arange(int(duration * sr)) / sr
    fc, fm = rng.uniform(300, 360), rng.uniform(20, 30)
    env = 0.5 * (1.0 + 0.9 * np.sin(2 * np.pi * fm * t))
    return _fade(0.8 * env * np.sin(2 * np.pi * fc * t) + _floor(rng, len(t)), sr)


GENERATORS = {"sweep": sine_sweep, "noise": noise_burst, "am": am_tone}


def make_corpus(directory, n_per_family=20, months=(1, 2, 3), sample_rate=16000,
                duration_range=(0.4, 0.8), seed=0, edge_clips=False, stereo_every=5):
    """Write WAV files and ``manifest.csv`` under ``directory``.

    Returns ``(manifest_path, labels)`` where ``labels`` maps clip id to family.
    With ``edge_clips`` the corpus also gets a pure-silence clip, a
    near-silent clip, an over-long clip and an undecodable file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries, labels = [], {}
    k = 0
    for family in FAMILIES:
        for i in range(n_per_family):
            cid = f"{family}_{i:03d}"
            x = GENERATORS[family](rng, sample_rate, rng.uniform(*duration_range))
            if stereo_every and k % stereo_every == 0:
                x = np.stack([x, 0.9 * x], axis=1)
            write_wav(directory / f"{cid}.wav", x, sample_rate)
            entries.append(ManifestEntry(cid, f"{cid}.wav", months[k % len(months)]))
            labels[cid] = family
            k += 1
    if edge_clips:
        n = int(0.5 * sample_rate)
        write_wav(directory / "edge_silence.wav", np.zeros(n), sample_rate)
        write_wav(directory / "edge_quiet.wav", 1e-3 * rng.normal(size=n), sample_rate)
        write_wav(directory / "edge_long.wav", 0.1 * rng.normal(size=int(10.5 * sample_rate)), sample_rate)
        (directory / "edge_broken.wav").write_bytes(b"RIFF\x00\x00\x00\x00WAVEjunk")
        for cid in ("edge_silence", "edge_quiet", "edge_long", "edge_broken"):
            entries.append(ManifestEntry(cid, f"{cid}.wav", months[0]))
    path = directory / "manifest.csv"
    write_manifest(Manifest(entries), path)
    return path, labels
