"""Audio clip decoding, corpus filtering and manifest handling."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

logger = logging.getLogger(__name__)

MAX_DURATION_SECONDS = 10.0


class DecodeError(Exception):
    """Raised when an audio file cannot be decoded as PCM WAV."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


class EmptyClipError(Exception):
    """Raised when an audio file holds zero samples."""


class ManifestError(Exception):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    month: int
    id: str
    path: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not 1 <= int(self.month) <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    month: int


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ManifestError(f"duplicate clip id {e.id!r}")
            if not 1 <= e.month <= 12:
                raise ManifestError(f"clip {e.id!r}: month {e.month} outside 1..12")
            seen.add(e.id)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def read_manifest(path) -> Manifest:
    """Read a ``id,path,month`` CSV manifest.

    Relative audio paths are resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", "path", "month"} - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                month = int(row["month"])
            except ValueError:
                raise ManifestError(f"clip {row['id']!r}: month {row['month']!r} is not an integer")
            clip_path = Path(row["path"])
            if not clip_path.is_absolute():
                clip_path = base / clip_path
            entries.append(ManifestEntry(row["id"], str(clip_path), month))
    return Manifest(entries)


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "path", "month"])
        for e in manifest:
            writer.writerow([e.id, e.path, e.month])


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return data.astype(np.float64) - 128.0
    if data.dtype.kind in "iuf":
        return data.astype(np.float64)
    raise TypeError(f"unsupported sample type {data.dtype}")


def decode_wav(path) -> tuple[np.ndarray, int]:
    """Return ``(mono_samples, sample_rate)`` for a PCM WAV file, unnormalized."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as exc:
        raise DecodeError(path, str(exc)) from exc
    except Exception as exc:  # scipy raises assorted types on malformed headers
        raise DecodeError(path, f"{type(exc).__name__}: {exc}") from exc
    try:
        x = _to_float(np.asarray(data))
    except TypeError as exc:
        raise DecodeError(path, str(exc)) from exc
    if x.ndim == 2:
        if x.shape[1] > 2:
            raise DecodeError(path, f"{x.shape[1]} channels; only mono or stereo supported")
        x = x.mean(axis=1)
    if not np.all(np.isfinite(x)):
        raise DecodeError(path, "non-finite samples")
    return x, int(rate)


def peak_normalize(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x)) if len(x) else 0.0
    if peak == 0:
        return np.zeros_like(x, dtype=np.float64)
    return x / peak


def load_clip(path, entry: ManifestEntry | None = None) -> AudioClip:
    """Decode ``path`` to a mono clip rescaled so its peak magnitude is 1.

    Stereo channels are averaged sample by sample before rescaling; an
    all-zero signal is returned unchanged.
    """
    x, rate = decode_wav(path)
    if len(x) == 0:
        raise EmptyClipError(f"{path}: zero-length audio")
    if entry is None:
        entry = ManifestEntry(id=Path(path).stem, path=str(path), month=1)
    return AudioClip(
        samples=peak_normalize(x),
        sample_rate=rate,
        month=entry.month,
        id=entry.id,
        path=str(path),
    )


def load_manifest_clips(manifest: Manifest):
    """Yield ``(entry, clip_or_exception)`` for every manifest row."""
    for entry in manifest:
        try:
            yield entry, load_clip(entry.path, entry)
        except (DecodeError, EmptyClipError) as exc:
            yield entry, exc


def filter_corpus(clips, max_seconds: float = MAX_DURATION_SECONDS):
    """Drop clips lasting more than ``max_seconds``; order is preserved."""
    kept = [c for c in clips if c.duration_seconds <= max_seconds]
    removed = len(clips) - len(kept)
    if removed:
        logger.info("filter_corpus: removed %d clip(s) longer than %.1f s", removed, max_seconds)
    return kept


@dataclass(frozen=True)
class MonthCount:
    month: int
    count: int
    mean_duration: float
    std_duration: float


def corpus_counts(clips) -> list[MonthCount]:
    """Per-month clip count and duration mean / population std, months ascending."""
    by_month: dict[int, list[float]] = {}
    for c in clips:
        by_month.setdefault(int(c.month), []).append(c.duration_seconds)
    rows = []
    for month in sorted(by_month):
        d = np.asarray(by_month[month])
        rows.append(MonthCount(month, len(d), float(d.mean()), float(d.std(ddof=0))))
    return rows


def write_wav(path, samples: np.ndarray, sample_rate: int, sampwidth: int = 2) -> None:
    """Write float samples in [-1, 1] as integer PCM (mono or ``(n, 2)`` stereo)."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    if sampwidth == 2:
        data = np.round(x * 32767).astype(np.int16)
    elif sampwidth == 4:
        data = np.round(x * 2147483647).astype(np.int32)
    elif sampwidth == 1:
        data = np.round(x * 127 + 128).astype(np.uint8)
    else:
        raise ValueError(f"unsupported sample width {sampwidth}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    wavfile.write(path, sample_rate, data)
