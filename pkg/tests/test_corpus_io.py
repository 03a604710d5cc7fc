import logging

import numpy as np
import pytest
from scipy.io import wavfile

from topovoc.corpus_io import (
    AudioClip,
    DecodeError,
    EmptyClipError,
    Manifest,
    ManifestEntry,
    ManifestError,
    corpus_counts,
    filter_corpus,
    load_clip,
    load_manifest_clips,
    read_manifest,
    write_manifest,
    write_wav,
)


def clip_of(seconds, month=1, sr=100, cid="c"):
    return AudioClip(np.zeros(int(round(seconds * sr))), sr, month, cid, "")


def test_stereo_cancellation_gives_silence(tmp_path):
    n = 1000
    data = np.column_stack([np.full(n, 16384), np.full(n, -16384)]).astype(np.int16)
    wavfile.write(tmp_path / "c.wav", 44100, data)
    clip = load_clip(tmp_path / "c.wav")
    assert np.all(clip.samples == 0.0)


def test_half_scale_stereo_ramp_rescaled_to_unit_peak(tmp_path):
    ramp = np.linspace(0, 16384, 500).astype(np.int16)
    wavfile.write(tmp_path / "r.wav", 22050, np.column_stack([ramp, ramp]))
    clip = load_clip(tmp_path / "r.wav")
    assert clip.samples.max() == 1.0
    np.testing.assert_allclose(clip.samples, ramp / 16384.0, atol=1e-12)
    assert clip.sample_rate == 22050


def test_corpus_rate_preserved(tmp_path):
    x = np.sin(np.linspace(0, 100, 44100))
    write_wav(tmp_path / "s.wav", np.column_stack([x, x]), 44100)
    clip = load_clip(tmp_path / "s.wav")
    assert clip.sample_rate == 44100
    assert clip.samples.ndim == 1


@pytest.mark.parametrize("width", [1, 2, 4])
def test_integer_widths_and_float(tmp_path, width):
    x = 0.5 * np.sin(np.linspace(0, 20, 800))
    write_wav(tmp_path / "w.wav", x, 8000, sampwidth=width)
    clip = load_clip(tmp_path / "w.wav")
    assert abs(np.max(np.abs(clip.samples)) - 1.0) <= np.spacing(1.0)
    np.testing.assert_allclose(clip.samples, x / np.max(np.abs(x)), atol=2e-2 if width == 1 else 1e-4)


def test_float32_wav(tmp_path):
    x = (0.25 * np.sin(np.linspace(0, 20, 800))).astype(np.float32)
    wavfile.write(tmp_path / "f.wav", 8000, x)
    clip = load_clip(tmp_path / "f.wav")
    np.testing.assert_allclose(clip.samples, x / np.abs(x).max(), atol=1e-6)


def test_garbled_file_raises_decode_error_with_path(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"RIFF\x00\x00\x00\x00WAVEjunk")
    with pytest.raises(DecodeError) as info:
        load_clip(p)
    assert str(p) in str(info.value)


def test_empty_audio_raises(tmp_path):
    wavfile.write(tmp_path / "e.wav", 8000, np.zeros(0, dtype=np.int16))
    with pytest.raises(EmptyClipError):
        load_clip(tmp_path / "e.wav")


def test_load_is_deterministic(tmp_path):
    write_wav(tmp_path / "d.wav", np.random.default_rng(1).uniform(-0.3, 0.3, 999), 8000)
    a = load_clip(tmp_path / "d.wav").samples
    b = load_clip(tmp_path / "d.wav").samples
    assert a.tobytes() == b.tobytes()


def test_filter_strictly_greater_than_ten_seconds(caplog):
    clips = [clip_of(10.5, cid="a"), clip_of(10.0, cid="b"), clip_of(2, cid="c")]
    with caplog.at_level(logging.INFO):
        kept = filter_corpus(clips)
    assert [c.id for c in kept] == ["b", "c"]
    assert "removed 1" in caplog.text


def test_filter_example_and_idempotence():
    clips = [clip_of(2, cid="a"), clip_of(3, cid="b"), clip_of(12, cid="c")]
    kept = filter_corpus(clips)
    assert [c.duration_seconds for c in kept] == [2.0, 3.0]
    assert filter_corpus(kept) == kept


def test_corpus_counts_examples():
    (row,) = corpus_counts([clip_of(4, month=2)])
    assert (row.month, row.count, row.mean_duration, row.std_duration) == (2, 1, 4.0, 0.0)
    (row,) = corpus_counts([clip_of(1, month=6), clip_of(3, month=6)])
    assert (row.count, row.mean_duration, row.std_duration) == (2, 2.0, 1.0)


def test_manifest_roundtrip_and_relative_paths(tmp_path):
    write_wav(tmp_path / "a.wav", np.ones(100) * 0.1, 8000)
    m = Manifest([ManifestEntry("a", "a.wav", 3)])
    write_manifest(m, tmp_path / "m.csv")
    back = read_manifest(tmp_path / "m.csv")
    assert back.entries[0].month == 3
    (entry, clip), = list(load_manifest_clips(back))
    assert clip.month == 3 and clip.id == "a"


def test_manifest_validation():
    with pytest.raises(ManifestError):
        Manifest([ManifestEntry("a", "x", 1), ManifestEntry("a", "y", 2)])
    with pytest.raises(ManifestError):
        Manifest([ManifestEntry("a", "x", 13)])


def test_manifest_missing_column(tmp_path):
    (tmp_path / "m.csv").write_text("id,path\na,b\n")
    with pytest.raises(ManifestError):
        read_manifest(tmp_path / "m.csv")
