"""Cluster-by-month tables, descriptor medians and the monthly proportion figure."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .acoustics import PROFILE_COLUMNS


@dataclass
class ProportionTable:
    """``values[r, c]`` in percent; ``rows`` are cluster ids and ``cols`` months."""

    rows: list
    cols: list
    values: np.ndarray


@dataclass
class ClusterReport:
    partition: dict  # clip id -> cluster id (1-based)
    table_counts: list
    table_cluster_by_month: ProportionTable
    table_month_by_cluster: ProportionTable
    table_medians: dict  # cluster -> {descriptor: median}
    garbage_candidates: list = field(default_factory=list)
    contrasts: dict = field(default_factory=dict)
    figure_path: str | None = None


def _crosstab(clusters, months):
    rows = sorted(set(clusters))
    cols = sorted(set(months))
    counts = np.zeros((len(rows), len(cols)))
    for c, m in zip(clusters, months):
        counts[rows.index(c), cols.index(m)] += 1
    return rows, cols, counts


def cluster_by_month(clusters, months) -> ProportionTable:
    """Share of each cluster's production falling in each month (rows sum to 100)."""
    rows, cols, counts = _crosstab(clusters, months)
    return ProportionTable(rows, cols, 100.0 * counts / counts.sum(axis=1, keepdims=True))


def month_by_cluster(clusters, months) -> ProportionTable:
    """Share of each month's production belonging to each cluster (columns sum to 100)."""
    rows, cols, counts = _crosstab(clusters, months)
    return ProportionTable(rows, cols, 100.0 * counts / counts.sum(axis=0, keepdims=True))


def median_table(clusters, profiles):
    """Per-cluster NaN-aware medians of the acoustic descriptors."""
    profiles = np.asarray(profiles, dtype=np.float64)
    clusters = np.asarray(clusters)
    out = {}
    for c in sorted(set(clusters.tolist())):
        block = profiles[clusters == c]
        med = []
        for j in range(block.shape[1]):
            col = block[:, j]
            col = col[np.isfinite(col)]
            med.append(float(np.median(col)) if len(col) else float("nan"))
        out[c] = dict(zip(PROFILE_COLUMNS, med))
    return out


def garbage_candidates(clusters, fraction=0.005):
    """Clusters holding fewer than ``fraction`` of all clips (flagged, never removed)."""
    clusters = list(clusters)
    n = len(clusters)
    return [c for c in sorted(set(clusters)) if clusters.count(c) < fraction * n]


def write_proportion_csv(path, table: ProportionTable, row_name="cluster") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([row_name, *[f"month_{m}" for m in table.cols]])
        for r, vals in zip(table.rows, table.values):
            w.writerow([r, *(f"{v:.4f}" for v in vals)])


def write_counts_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "count", "mean_duration_s", "std_duration_s"])
        for r in rows:
            w.writerow([r.month, r.count, f"{r.mean_duration:.4f}", f"{r.std_duration:.4f}"])
        fh.write("# std_duration_s is the population standard deviation (divide by n)\n")


def write_medians_csv(path, medians) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", *PROFILE_COLUMNS])
        for c, row in medians.items():
            w.writerow([c, *(f"{row[k]:.6g}" for k in PROFILE_COLUMNS)])


def emit_figure(table: ProportionTable, path, months=range(1, 13)) -> str:
    """Stacked per-month cluster shares as SVG.

    Every month in ``months`` gets an x slot; months without data stay empty
    and are labelled as gaps rather than interpolated.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "topovoc"
    months = list(months)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    cmap = plt.get_cmap("tab20")
    bottoms = np.zeros(len(months))
    for r, cluster in enumerate(table.rows):
        heights = np.array([table.values[r, table.cols.index(m)] if m in table.cols else 0.0 for m in months])
        ax.bar(months, heights, bottom=bottoms, color=cmap(r % 20), edgecolor="white", linewidth=0.5,
               label=f"Cluster {cluster}")
        bottoms += heights
    for m in months:
        if m not in table.cols:
            ax.text(m, 50, "no data", rotation=90, ha="center", va="center", fontsize=8, color="0.5")
    ax.set_xticks(months)
    ax.set_xlim(months[0] - 0.6, months[-1] + 0.6)
    ax.set_ylim(0, 100)
    ax.set_xlabel("Month")
    ax.set_ylabel("Share of monthly production (%)")
    ax.legend(loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return str(path)
