"""Diagram vectorisation, per-source PCA persistent variables and the 14-D feature vector."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

DESCRIPTORS = (
    "entropy",
    "p_norm",
    "betti",
    "lifetime_count",
    "lifetime_mean",
    "lifetime_std",
    "lifetime_max",
    "lifetime_sum",
)
N_MFCC = 12
FEATURE_COLUMNS = tuple(f"mfcc{i}" for i in range(1, N_MFCC + 1)) + ("pers_spec", "pers_emb")


def _finite_lifetimes(diagram, dim):
    life = diagram.lifetimes(dim)
    return life[np.isfinite(life)]


def persistent_entropy(diagram, dim) -> float:
    """Shannon entropy (nats) of the normalised lifetimes of ``dim``-classes."""
    life = _finite_lifetimes(diagram, dim)
    life = life[life > 0]
    if len(life) < 2:
        return 0.0
    p = life / life.sum()
    return float(-np.sum(p * np.log(p)))


def diagram_p_norm(diagram, dim, p=2) -> float:
    life = _finite_lifetimes(diagram, dim)
    if len(life) == 0:
        return 0.0
    return float(np.sum(life**p) ** (1.0 / p))


def persistent_betti(diagram, dim, r) -> int:
    """Number of ``dim``-classes alive at ``r`` (birth <= r < death)."""
    b, d = diagram.select(dim)
    return int(np.count_nonzero((b <= r) & (r < d)))


def lifetime_stats(diagram, dim):
    """``(count, mean, std, max, sum)`` of lifetimes; population std; zeros when empty."""
    life = _finite_lifetimes(diagram, dim)
    if len(life) == 0:
        return (0, 0.0, 0.0, 0.0, 0.0)
    return (len(life), float(life.mean()), float(life.std()), float(life.max()), float(life.sum()))


def feature_names(max_dim):
    return [f"h{k}_{name}" for k in range(max_dim + 1) for name in DESCRIPTORS]


def diagram_features(diagram, p=2) -> np.ndarray:
    """Flatten a diagram into ``(max_dim + 1) * 8`` descriptors, ordered as ``feature_names``."""
    r = diagram.midpoint
    out = []
    for k in range(diagram.max_dim + 1):
        out.append(persistent_entropy(diagram, k))
        out.append(diagram_p_norm(diagram, k, p))
        out.append(persistent_betti(diagram, k, r))
        out.extend(lifetime_stats(diagram, k))
    return np.asarray(out, dtype=np.float64)


@dataclass
class PCAModel:
    columns: list  # names of the columns kept after dropping constant ones
    mean: np.ndarray
    scale: np.ndarray
    axis: np.ndarray  # unit first principal axis in standardized space
    explained_variance_ratio: float
    all_ratios: np.ndarray
    dropped: list

    def transform(self, rows, names) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if not self.columns:
            return np.zeros(len(rows))
        idx = [list(names).index(c) for c in self.columns]
        z = (rows[:, idx] - self.mean) / self.scale
        return z @ self.axis


def fit_persistent_variable(rows, names, sign_column="h0_lifetime_sum"):
    """Standardise, fit PCA and return ``(PCAModel, first-component scores)``.

    Constant columns are dropped with a warning. The axis sign makes the
    ``sign_column`` loading nonnegative (or, if that column was dropped, the
    largest-magnitude loading positive).
    """
    rows = np.asarray(rows, dtype=np.float64)
    names = list(names)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValueError("need at least two rows to fit a persistent variable")
    if rows.shape[1] != len(names):
        raise ValueError("column names do not match row width")
    mean = rows.mean(axis=0)
    scale = rows.std(axis=0)
    keep = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
    dropped = [n for n, k in zip(names, keep) if not k]
    if dropped:
        logger.warning("fit_persistent_variable: dropping constant columns %s", dropped)
    kept = [n for n, k in zip(names, keep) if k]
    if not kept:
        model = PCAModel([], np.zeros(0), np.zeros(0), np.zeros(0), 0.0, np.zeros(0), dropped)
        return model, np.zeros(rows.shape[0])

    z = (rows[:, keep] - mean[keep]) / scale[keep]
    _, s, vt = np.linalg.svd(z, full_matrices=False)
    var = s**2
    ratios = var / var.sum()
    axis = vt[0].copy()
    if sign_column in kept:
        flip = axis[kept.index(sign_column)] < 0
    else:
        flip = axis[np.argmax(np.abs(axis))] < 0
    if flip:
        axis = -axis
    model = PCAModel(kept, mean[keep], scale[keep], axis, float(ratios[0]), ratios, dropped)
    return model, z @ axis


class AssemblyError(ValueError):
    pass


@dataclass
class FeatureVector:
    id: str
    month: int
    mfcc: np.ndarray
    persvar_spectrogram: float
    persvar_embedding: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.mfcc, [self.persvar_spectrogram, self.persvar_embedding]])


def assemble(mfcc, s_spec, s_emb, id, month) -> FeatureVector:
    """Stack 12 mean MFCCs and the two persistent variables into a 14-D vector."""
    mfcc = np.asarray(mfcc, dtype=np.float64).ravel()
    if mfcc.shape != (N_MFCC,):
        raise AssemblyError(f"clip {id}: mfcc stage produced {mfcc.size} values, expected {N_MFCC}")
    for stage, value in (("mfcc", mfcc), ("spectrogram persistence", s_spec), ("embedding persistence", s_emb)):
        if not np.all(np.isfinite(value)):
            raise AssemblyError(f"clip {id}: non-finite value from {stage} stage")
    return FeatureVector(str(id), int(month), mfcc, float(s_spec), float(s_emb))


def write_features_csv(path, vectors) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "month", *FEATURE_COLUMNS])
        for v in vectors:
            w.writerow([v.id, v.month, *(repr(float(a)) for a in v.as_array())])


def read_features_csv(path):
    vectors = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = [float(row[c]) for c in FEATURE_COLUMNS]
            vectors.append(FeatureVector(row["id"], int(row["month"]), np.asarray(vals[:N_MFCC]), vals[12], vals[13]))
    return vectors
