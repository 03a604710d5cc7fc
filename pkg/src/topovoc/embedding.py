"""Delay embedding of a waveform: AMI delay, Cao dimension, Takens cloud, 3-D reduction."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist, squareform

logger = logging.getLogger(__name__)

AMI_THRESHOLD = 1.0 / np.e


@dataclass
class EmbeddingParams:
    tau: int | None = None  # None -> chosen by AMI
    D: int | None = None  # None -> chosen by Cao
    ami_bins: int = 64
    tau_max_seconds: float = 0.05
    cao_threshold: float = 0.05
    cao_floor: float = 0.8
    cao_dmax: int = 20
    cao_e2_tol: float = 0.1
    cao_max_points: int = 3000
    subsample_target: int = 2000
    reduce_neighbors: int = 15
    reduce_min_dist: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.tau is not None and self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.D is not None and self.D < 1:
            raise ValueError("D must be >= 1")
        for name in ("cao_threshold", "cao_floor"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass
class PointCloud:
    points: np.ndarray
    notes: tuple = field(default=())

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        if len(self.points) == 0:
            raise ValueError("point cloud is empty")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud has non-finite coordinates")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)


def _bin_indices(x, bins):
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi <= lo:
        return None
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def _mi_from_indices(idx, tau, bins):
    a, b = idx[:-tau], idx[tau:]
    joint = np.bincount(a * bins + b, minlength=bins * bins).astype(np.float64)
    joint /= joint.sum()
    joint = joint.reshape(bins, bins)
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)
    nz = joint > 0
    mi = np.sum(joint[nz] * np.log(joint[nz] / np.outer(pa, pb)[nz]))
    return max(float(mi), 0.0)


def average_mutual_information(x, tau: int, bins: int = 64) -> float:
    """Mutual information in nats between ``x[t]`` and ``x[t + tau]``.

    Uses an equal-width ``bins x bins`` histogram over the range of ``x``.
    A constant signal has zero AMI.
    """
    x = np.asarray(x, dtype=np.float64)
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if len(x) - tau < 2 * bins:
        raise ValueError(f"need at least {2 * bins} lagged pairs, got {len(x) - tau}")
    idx = _bin_indices(x, bins)
    if idx is None:
        return 0.0
    return _mi_from_indices(idx, tau, bins)


class DelayChoice(NamedTuple):
    tau: int
    ami: float
    fallback: bool


def default_tau_max(n_samples, sample_rate, seconds=0.05):
    return max(1, min(n_samples // 4, int(round(seconds * sample_rate))))


def select_delay(x, params: EmbeddingParams | None = None, sample_rate=44100, tau_max=None) -> DelayChoice:
    """First delay with AMI below 1/e; falls back to the AMI minimiser over 1..tau_max."""
    params = params or EmbeddingParams()
    x = np.asarray(x, dtype=np.float64)
    bins = params.ami_bins
    if tau_max is None:
        tau_max = default_tau_max(len(x), sample_rate, params.tau_max_seconds)
    tau_max = min(tau_max, len(x) - 2 * bins)
    if tau_max < 1:
        raise ValueError("signal too short for delay selection")
    idx = _bin_indices(x, bins)
    if idx is None:
        return DelayChoice(1, 0.0, False)
    values = []
    for tau in range(1, tau_max + 1):
        mi = _mi_from_indices(idx, tau, bins)
        if mi < AMI_THRESHOLD:
            return DelayChoice(tau, mi, False)
        values.append(mi)
    best = int(np.argmin(values))
    logger.debug("select_delay: no AMI crossing below 1/e up to tau=%d", tau_max)
    return DelayChoice(best + 1, values[best], True)


def takens_embed(x, tau: int, D: int) -> PointCloud:
    """Delay vectors ``(x[i], x[i+tau], ..., x[i+(D-1)tau])`` in index order."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x) - (D - 1) * tau
    if tau < 1 or D < 1:
        raise ValueError("tau and D must be >= 1")
    if n < 1:
        raise ValueError(f"signal of length {len(x)} too short for tau={tau}, D={D}")
    return PointCloud(np.stack([x[k * tau : k * tau + n] for k in range(D)], axis=1))


class CaoResult(NamedTuple):
    D: int
    E1: np.ndarray  # E1[d-1] for d = 1..dmax
    E2: np.ndarray
    fallback: bool


def _nearest_excluding(pts, theiler):
    """Nearest neighbour by max-norm, skipping zero distances and |i - j| <= theiler.

    Ties are broken by the lowest index. Repeated vectors (digital silence)
    are collapsed first; each distinct vector is represented by its earliest
    occurrence for the Theiler test.
    """
    n = len(pts)
    uniq, first, inverse = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    m = len(uniq)
    tree = cKDTree(uniq)
    nn = np.full(n, -1, dtype=np.int64)
    todo = np.arange(n)
    k = min(m, 16)
    while len(todo) and m > 1:
        raw, ind = tree.query(uniq[inverse[todo]], k=k, p=np.inf)
        raw = raw.reshape(len(todo), -1)
        ind = ind.reshape(len(todo), -1)
        j = first[np.minimum(ind, m - 1)]
        valid = (ind < m) & (raw > 0) & (np.abs(j - todo[:, None]) > theiler)
        dist = np.where(valid, raw, np.inf)
        best_d = dist.min(axis=1)
        # a tie at best_d could sit past the k-th neighbour unless the k-th
        # distance is strictly larger (or every vector was returned)
        found = np.isfinite(best_d) & ((k >= m) | (best_d < raw[:, -1]))
        cand = np.where(dist == best_d[:, None], j, np.iinfo(np.int64).max)
        nn[todo[found]] = cand[found].min(axis=1)
        todo = todo[~found]
        if k >= m:
            break
        k = min(m, k * 4)
    return nn


def cao_embedding_dimension(x, tau: int, params: EmbeddingParams | None = None, theiler=None) -> CaoResult:
    """Cao's E1/E2 statistics and the saturation dimension.

    D is the smallest d with ``|E1(d+1) - E1(d)| < cao_threshold`` and
    ``E1(d) > cao_floor``. If E2 stays within ``cao_e2_tol`` of 1 at every d
    the series is treated as stochastic and D falls back to ``cao_dmax``.
    Long series are strided down to about ``cao_max_points`` delay vectors.
    """
    params = params or EmbeddingParams()
    x = np.asarray(x, dtype=np.float64)
    dmax = params.cao_dmax
    if len(x) <= (dmax + 1) * tau:
        raise ValueError(f"series of length {len(x)} too short for Cao with dmax={dmax}, tau={tau}")
    theiler = tau if theiler is None else theiler
    n_vec = len(x) - (dmax + 1) * tau  # vectors that extend to dimension dmax + 2
    stride = max(1, int(np.ceil(n_vec / params.cao_max_points)))
    starts = np.arange(0, n_vec, stride)
    w = int(np.ceil(theiler / stride))

    E = np.empty(dmax + 1)
    Estar = np.empty(dmax + 1)
    for d in range(1, dmax + 2):
        emb = np.stack([x[starts + k * tau] for k in range(d)], axis=1)
        nn = _nearest_excluding(emb, w)
        ok = nn >= 0
        if not ok.any():
            raise ValueError(f"no delay vectors outside the Theiler window at d={d}; series too short")
        i, j = starts[ok], starts[nn[ok]]
        dist_d = np.max(np.abs(emb[ok] - emb[nn[ok]]), axis=1)
        extra = np.abs(x[i + d * tau] - x[j + d * tau])
        dist_d1 = np.maximum(dist_d, extra)
        E[d - 1] = np.mean(dist_d1 / dist_d)
        Estar[d - 1] = np.mean(extra)
    E1 = E[1:] / E[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        E2 = np.where(Estar[:-1] > 0, Estar[1:] / Estar[:-1], 1.0)

    if np.all(np.abs(E2 - 1.0) < params.cao_e2_tol):
        return CaoResult(dmax, E1, E2, True)
    for d in range(1, dmax):
        if abs(E1[d] - E1[d - 1]) < params.cao_threshold and E1[d - 1] > params.cao_floor:
            return CaoResult(d, E1, E2, False)
    return CaoResult(dmax, E1, E2, True)


def subsample(cloud: PointCloud, target: int) -> PointCloud:
    """Keep every ``ceil(n / target)``-th point, preserving order."""
    n = len(cloud)
    if n <= target:
        return cloud
    stride = int(np.ceil(n / target))
    return PointCloud(cloud.points[::stride], cloud.notes)


def _pca_project(points, k=3):
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    out = centered @ vt[:k].T
    if out.shape[1] < k:
        out = np.hstack([out, np.zeros((len(out), k - out.shape[1]))])
    return out


def reduce_to_3d(cloud: PointCloud, params: EmbeddingParams | None = None) -> PointCloud:
    """Bring a cloud to exactly three coordinates.

    Three-dimensional clouds are returned as is and lower dimensions are
    zero-padded. Higher dimensions go through a seeded UMAP layout after
    stride subsampling; clouds too small for the neighbour graph use the
    top three principal components instead.
    """
    params = params or EmbeddingParams()
    if cloud.dim == 3:
        return cloud
    cloud = subsample(cloud, params.subsample_target)
    pts = cloud.points
    if cloud.dim < 3:
        pad = np.zeros((len(pts), 3 - cloud.dim))
        return PointCloud(np.hstack([pts, pad]), cloud.notes)
    if len(pts) < params.reduce_neighbors + 1:
        logger.warning("reduce_to_3d: %d points < n_neighbors+1, using PCA projection", len(pts))
        return PointCloud(_pca_project(pts), cloud.notes + ("pca_fallback",))

    import umap  # slow import; keep it local

    # below 4096 points umap builds the exact distance matrix itself through a
    # per-pair Python callback; handing it the same matrix is far faster
    small = len(pts) < 4096
    reducer = umap.UMAP(
        n_components=3,
        n_neighbors=params.reduce_neighbors,
        min_dist=params.reduce_min_dist,
        metric="precomputed" if small else "euclidean",
        random_state=params.rng_seed,
        n_jobs=1,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = reducer.fit_transform(squareform(pdist(pts)) if small else pts)
    return PointCloud(np.asarray(out, dtype=np.float64), cloud.notes)


@dataclass
class EmbeddingInfo:
    tau: int
    D: int
    tau_fallback: bool
    D_fallback: bool
    n_points: int


def embed_clip(samples, sample_rate, params: EmbeddingParams | None = None):
    """Full per-clip chain: delay, dimension, Takens cloud, subsample, reduce."""
    params = params or EmbeddingParams()
    if params.tau is None:
        choice = select_delay(samples, params, sample_rate)
        tau, tau_fb = choice.tau, choice.fallback
    else:
        tau, tau_fb = params.tau, False
    if params.D is None:
        # largest dmax leaving at least 3*tau + 16 delay vectors, so neighbours
        # outside the Theiler window exist
        room = (len(samples) - 16) // tau - 4
        if room < params.cao_dmax:
            if room < 2:
                raise ValueError(f"series of length {len(samples)} too short to embed with tau={tau}")
            logger.warning("embed_clip: short series, Cao dmax lowered to %d", room)
            params = replace(params, cao_dmax=room)
        cao = cao_embedding_dimension(samples, tau, params)
        D, D_fb = cao.D, cao.fallback
    else:
        D, D_fb = params.D, False
    cloud = subsample(takens_embed(samples, tau, D), params.subsample_target)
    cloud3 = reduce_to_3d(cloud, params)
    return cloud3, EmbeddingInfo(tau, D, tau_fb, D_fb, len(cloud3))
