"""Persistence diagrams for spectrogram surfaces (cubical) and 3-D clouds (alpha)."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import gudhi

logger = logging.getLogger(__name__)

SPECTROGRAM = "spectrogram"
EMBEDDING = "embedding"


@dataclass
class PersistenceDiagram:
    """Finite diagram: essential classes carry ``death == cap_value``.

    ``births``, ``deaths`` and ``dims`` are parallel arrays; ``essential``
    marks the points whose death was infinite before capping.
    """

    births: np.ndarray
    deaths: np.ndarray
    dims: np.ndarray
    essential: np.ndarray
    cap_value: float
    source: str
    min_value: float = 0.0

    def __post_init__(self):
        if np.any(self.births > self.deaths):
            raise ValueError("diagram has a point with birth > death")

    def __len__(self):
        return len(self.births)

    @property
    def max_dim(self):
        return 1 if self.source == SPECTROGRAM else 2

    def select(self, dim):
        m = self.dims == dim
        return self.births[m], self.deaths[m]

    def lifetimes(self, dim):
        b, d = self.select(dim)
        return d - b

    def pairs(self, dim):
        b, d = self.select(dim)
        return np.column_stack([b, d])

    @property
    def midpoint(self):
        """Centre of the filtration range, used for persistent Betti numbers."""
        return 0.5 * (self.min_value + self.cap_value)


def _from_gudhi(pairs, cap, source, min_value, max_dim):
    births, deaths, dims, ess = [], [], [], []
    for dim, (b, d) in pairs:
        if dim > max_dim:
            continue
        inf = not np.isfinite(d)
        births.append(b)
        deaths.append(cap if inf else d)
        dims.append(dim)
        ess.append(inf)
    return PersistenceDiagram(
        births=np.asarray(births, dtype=np.float64),
        deaths=np.asarray(deaths, dtype=np.float64),
        dims=np.asarray(dims, dtype=np.int64),
        essential=np.asarray(ess, dtype=bool),
        cap_value=float(cap),
        source=source,
        min_value=float(min_value),
    )


def sublevel_cubical_persistence(grid) -> PersistenceDiagram:
    """H0/H1 of the lower-star filtration of a 2-D grid of vertex values.

    Pixels are vertices joined to their 4-neighbours; edges and squares enter
    at the maximum of their vertex values. Essential classes die at the grid
    maximum. Zero-length pairs are not reported.
    """
    values = np.asarray(getattr(grid, "values", grid), dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("expected a non-empty 2-D grid")
    cc = gudhi.CubicalComplex(vertices=values)
    pairs = cc.persistence(homology_coeff_field=2)
    return _from_gudhi(pairs, values.max(), SPECTROGRAM, values.min(), 1)


def alpha_persistence(cloud) -> PersistenceDiagram:
    """H0/H1/H2 of the alpha filtration (squared-radius values) of a 3-D cloud.

    Degenerate configurations are resolved by the exact predicates of the
    Delaunay backend. Essential classes die at the largest filtration value.
    """
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("expected a non-empty (n, d) point array")
    if np.all(pts == pts[0]):
        logger.warning("alpha_persistence: all %d points coincide", len(pts))
        return _from_gudhi([(0, (0.0, np.inf))], 0.0, EMBEDDING, 0.0, 2)
    st = gudhi.AlphaComplex(points=pts).create_simplex_tree()
    pairs = st.persistence(homology_coeff_field=2)
    cap = max(f for _, f in st.get_filtration())
    return _from_gudhi(pairs, cap, EMBEDDING, 0.0, 2)


def write_diagrams_csv(path, diagrams: dict) -> None:
    """Debug dump: rows ``id,source,dim,birth,death`` for ``{clip_id: [diagram, ...]}``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "source", "dim", "birth", "death"])
        for clip_id, dgms in diagrams.items():
            for dg in dgms:
                for b, d, k in zip(dg.births, dg.deaths, dg.dims):
                    w.writerow([clip_id, dg.source, int(k), repr(float(b)), repr(float(d))])
