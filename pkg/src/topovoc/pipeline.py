"""End-to-end orchestration: manifest in, clusters, contrasts and tables out.

Output files (all in ``config.output_dir``):

=========================== ==================================================
features.csv                id, month and the 14 clustering features
diagram_features.csv        per-clip diagram descriptors for both sources
pca.csv                     persistent-variable loadings and explained variance
embedding.csv               per-clip delay, dimension and fallback flags
acoustics.csv               per-clip acoustic descriptors
skipped.csv                 clips left out, with stage and reason
corpus_counts.csv           per-month counts and durations
chain_trace.csv             iter, K, log-likelihood per sweep
partition_samples.txt       post-burn-in partitions, run-length encoded
similarity.bin              posterior similarity, row-major little-endian float32 N x N
dpmm_summary.csv            alpha, sample count, K and expected VI of the estimate
partition.csv               id, cluster (1-based)
profiles.csv                id, cluster and acoustic descriptors
fits.csv                    multinomial logit coefficients per reference cluster
contrasts.csv               descriptors distinguishing each reference cluster
table_cluster_by_month.csv  each cluster's production across months (rows sum to 100)
table_month_by_cluster.csv  each month's production across clusters (columns sum to 100)
table_medians.csv           per-cluster descriptor medians
garbage_candidates.csv      clusters below the configured size fraction
figure.svg                  stacked monthly proportions per cluster
=========================== ==================================================
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import acoustics, dpmm, features, persistence, report, spectral, stats_glm
from .config import PipelineConfig
from .corpus_io import ManifestError, corpus_counts, load_manifest_clips, read_manifest
from .embedding import embed_clip

logger = logging.getLogger(__name__)

SPEC_NAMES = features.feature_names(1)
EMB_NAMES = features.feature_names(2)


class StageError(RuntimeError):
    """A pipeline failure tagged with the stage and, when relevant, the clip."""

    def __init__(self, stage, cause, clip_id=None):
        self.stage, self.cause, self.clip_id = stage, cause, clip_id
        where = f" (clip {clip_id})" if clip_id is not None else ""
        super().__init__(f"[{stage}]{where} {cause}")


@dataclass
class ClipResult:
    id: str
    month: int
    duration: float
    mfcc: np.ndarray
    spec_features: np.ndarray
    emb_features: np.ndarray
    profile: acoustics.AcousticProfile
    embedding: object
    diagrams: tuple = ()


def process_clip(clip, cfg: PipelineConfig) -> ClipResult:
    """Per-clip work for the feature stage; raises ``StageError`` on failure."""
    stage = "spectral"
    try:
        mfcc = spectral.mfcc_mean(clip, cfg.spectral)
        spec = spectral.spectrogram(clip, cfg.spectral)
        stage = "persistence"
        dg_spec = persistence.sublevel_cubical_persistence(spec)
        stage = "embedding"
        cloud, info = embed_clip(clip.samples, clip.sample_rate, cfg.embedding)
        stage = "persistence"
        dg_emb = persistence.alpha_persistence(cloud)
        stage = "features"
        f_spec = features.diagram_features(dg_spec)
        f_emb = features.diagram_features(dg_emb)
        stage = "acoustics"
        prof = acoustics.profile(clip)
    except StageError:
        raise
    except Exception as exc:  # any per-clip failure becomes a skip
        raise StageError(stage, f"{type(exc).__name__}: {exc}", clip.id) from exc
    diagrams = (dg_spec, dg_emb) if cfg.dump_diagrams else ()
    return ClipResult(clip.id, clip.month, clip.duration_seconds, mfcc, f_spec, f_emb, prof, info, diagrams)


def _safe_process(args):
    clip, cfg = args
    try:
        return process_clip(clip, cfg)
    except StageError as exc:
        return exc


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


# ---------------------------------------------------------------------------
# stages


def run_features(cfg: PipelineConfig):
    """Load, filter and featurise every clip; returns ``(feature_vectors, skips)``."""
    out = cfg.output_dir
    try:
        manifest = read_manifest(cfg.manifest)
    except (ManifestError, OSError) as exc:
        raise StageError("corpus_io", exc) from exc
    if len(manifest) == 0:
        raise StageError("corpus_io", f"manifest {cfg.manifest} lists no clips")

    skips, clips = [], []
    for entry, clip in load_manifest_clips(manifest):
        if isinstance(clip, Exception):
            skips.append((entry.id, "corpus_io", f"decode failed: {clip}"))
        elif clip.duration_seconds > cfg.max_duration:
            skips.append((entry.id, "corpus_io", f"duration {clip.duration_seconds:.3f} s exceeds {cfg.max_duration:g} s"))
        elif not np.any(clip.samples):
            skips.append((entry.id, "corpus_io", "pure silence (all samples zero)"))
        else:
            clips.append(clip)

    jobs = [(c, cfg) for c in clips]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_safe_process, jobs))
    else:
        results = [_safe_process(j) for j in jobs]

    done = []
    for clip, res in zip(clips, results):
        if isinstance(res, StageError):
            skips.append((clip.id, res.stage, res.cause))
        else:
            done.append(res)
    for clip_id, stage, reason in skips:
        logger.warning("skipping clip %s at %s: %s", clip_id, stage, reason)
    if len(done) < 2:
        raise StageError("features", f"only {len(done)} usable clip(s); at least 2 are needed")

    pca_spec, s_spec = features.fit_persistent_variable([r.spec_features for r in done], SPEC_NAMES)
    pca_emb, s_emb = features.fit_persistent_variable([r.emb_features for r in done], EMB_NAMES)
    vectors = []
    for r, a, b in zip(done, s_spec, s_emb):
        try:
            vectors.append(features.assemble(r.mfcc, a, b, r.id, r.month))
        except features.AssemblyError as exc:
            raise StageError("features", exc, r.id) from exc

    features.write_features_csv(out / "features.csv", vectors)
    _write_diagram_features(out / "diagram_features.csv", done)
    _write_pca(out / "pca.csv", {"spectrogram": pca_spec, "embedding": pca_emb})
    fh, w = _writer(out / "embedding.csv")
    with fh:
        w.writerow(["id", "tau", "D", "tau_fallback", "D_fallback", "n_points"])
        for r in done:
            e = r.embedding
            w.writerow([r.id, e.tau, e.D, int(e.tau_fallback), int(e.D_fallback), e.n_points])
    fh, w = _writer(out / "acoustics.csv")
    with fh:
        w.writerow(["id", *acoustics.PROFILE_COLUMNS])
        for r in done:
            w.writerow([r.id, *(repr(float(v)) for v in r.profile.as_array())])
    fh, w = _writer(out / "skipped.csv")
    with fh:
        w.writerow(["id", "stage", "reason"])
        w.writerows(skips)
    report.write_counts_csv(out / "corpus_counts.csv", corpus_counts(clips))
    if cfg.dump_diagrams:
        persistence.write_diagrams_csv(out / "diagrams.csv", {r.id: list(r.diagrams) for r in done})
    logger.info("features: %d clip(s) featurised, %d skipped", len(done), len(skips))
    return vectors, skips


def _write_diagram_features(path, results):
    fh, w = _writer(path)
    with fh:
        w.writerow(["id", "source", *EMB_NAMES])
        for r in results:
            w.writerow([r.id, "spectrogram", *(repr(float(v)) for v in r.spec_features), *([""] * 8)])
            w.writerow([r.id, "embedding", *(repr(float(v)) for v in r.emb_features)])


def _write_pca(path, models):
    fh, w = _writer(path)
    with fh:
        w.writerow(["source", "column", "loading", "mean", "scale", "explained_variance_ratio"])
        for source, m in models.items():
            for c, a, mu, s in zip(m.columns, m.axis, m.mean, m.scale):
                w.writerow([source, c, repr(float(a)), repr(float(mu)), repr(float(s)), repr(m.explained_variance_ratio)])
            for c in m.dropped:
                w.writerow([source, c, "dropped", "", "", repr(m.explained_variance_ratio)])


def run_cluster(cfg: PipelineConfig):
    """Fit the DPMM on ``features.csv`` and write the partition outputs."""
    out = cfg.output_dir
    path = out / "features.csv"
    if not path.exists():
        raise StageError("dpmm", f"{path} not found; run the features stage first")
    vectors = features.read_features_csv(path)
    if len(vectors) < 2:
        raise StageError("dpmm", "fewer than two feature vectors")
    X = np.stack([v.as_array() for v in vectors])
    d = cfg.dpmm
    try:
        priors = dpmm.DPMMPriors.empirical(X, k_target=d.k_target, alpha=d.alpha)
        chain = dpmm.run_chain(X, priors, iters=d.iters, burnin=d.burnin, seed=d.seed, thin=d.thin, init=d.init_spec)
        uniq, losses = dpmm.expected_vi_losses(chain.samples)
        best = int(np.argmin(losses))
        estimate = uniq[best]
        psm = dpmm.posterior_similarity(chain.samples)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StageError("dpmm", exc) from exc

    fh, w = _writer(out / "chain_trace.csv")
    with fh:
        w.writerow(["iter", "K", "loglik"])
        for it, K, ll in chain.trace:
            w.writerow([it, K, repr(float(ll))])
    dpmm.write_partition_samples(out / "partition_samples.txt", chain.samples)
    psm.astype("<f4").tofile(out / "similarity.bin")
    fh, w = _writer(out / "dpmm_summary.csv")
    with fh:
        w.writerow(["alpha", "n_samples", "n_unique", "K", "expected_vi"])
        w.writerow([repr(float(priors.alpha)), len(chain.samples), len(uniq), estimate.K, repr(float(losses[best]))])
    fh, w = _writer(out / "partition.csv")
    with fh:
        w.writerow(["id", "cluster"])
        for v, lab in zip(vectors, estimate.labels):
            w.writerow([v.id, int(lab) + 1])
    logger.info("dpmm: K=%d over %d clips", estimate.K, len(vectors))
    return estimate


def _read_table(path, stage):
    if not path.exists():
        raise StageError(stage, f"{path} not found; run the earlier stages first")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _impute(P):
    """Median-impute NaN descriptors; drop columns with no finite value."""
    P = P.copy()
    keep = np.zeros(P.shape[1], dtype=bool)
    for j in range(P.shape[1]):
        col = P[:, j]
        ok = np.isfinite(col)
        if ok.any():
            col[~ok] = np.median(col[ok])
            keep[j] = True
    return P[:, keep], keep


def run_report(cfg: PipelineConfig) -> report.ClusterReport:
    """Profiles, contrasts, proportion tables and the figure for a finished partition."""
    out = cfg.output_dir
    feats = {r["id"]: int(r["month"]) for r in _read_table(out / "features.csv", "report")}
    part = {r["id"]: int(r["cluster"]) for r in _read_table(out / "partition.csv", "report")}
    acou = {r["id"]: r for r in _read_table(out / "acoustics.csv", "acoustics")}
    ids = list(part)
    missing = [i for i in ids if i not in acou or i not in feats]
    if missing:
        raise StageError("report", f"no features or acoustics for clip(s) {missing[:5]}")
    clusters = [part[i] for i in ids]
    months = [feats[i] for i in ids]
    P = np.array([[float(acou[i][c]) for c in acoustics.PROFILE_COLUMNS] for i in ids])

    fh, w = _writer(out / "profiles.csv")
    with fh:
        w.writerow(["id", "cluster", *acoustics.PROFILE_COLUMNS])
        for i, c, row in zip(ids, clusters, P):
            w.writerow([i, c, *(repr(float(v)) for v in row)])

    contrasts, fits = {}, []
    sizes = {c: clusters.count(c) for c in set(clusters)}
    fit_clusters = sorted(c for c, n in sizes.items() if n >= 2)
    if len(fit_clusters) >= 2:
        Pi, keep = _impute(P)
        names = [n for n, k in zip(acoustics.PROFILE_COLUMNS, keep) if k]
        try:
            fits = [stats_glm.fit_multinomial(Pi, clusters, r, names) for r in fit_clusters]
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise StageError("stats_glm", exc) from exc
        contrasts = stats_glm.contrast_report(fits, cfg.glm_alpha)
    else:
        logger.warning("report: fewer than two clusters with >= 2 members, no contrasts fitted")
    stats_glm.write_fits_csv(out / "fits.csv", fits)
    fh, w = _writer(out / "contrasts.csv")
    with fh:
        w.writerow(["reference", "descriptors"])
        for ref, names in contrasts.items():
            w.writerow([ref, ";".join(names)])

    cbm = report.cluster_by_month(clusters, months)
    mbc = report.month_by_cluster(clusters, months)
    medians = report.median_table(clusters, P)
    garbage = report.garbage_candidates(clusters, cfg.garbage_fraction)
    report.write_proportion_csv(out / "table_cluster_by_month.csv", cbm)
    report.write_proportion_csv(out / "table_month_by_cluster.csv", mbc)
    report.write_medians_csv(out / "table_medians.csv", medians)
    fh, w = _writer(out / "garbage_candidates.csv")
    with fh:
        w.writerow(["cluster", "size"])
        for c in garbage:
            w.writerow([c, sizes[c]])
    counts_path = out / "corpus_counts.csv"
    counts = []
    if counts_path.exists():
        with open(counts_path, newline="") as fh:
            counts = [r for r in csv.DictReader(fh) if not r["month"].startswith("#")]
    fig = report.emit_figure(mbc, out / "figure.svg")
    return report.ClusterReport(
        partition=part,
        table_counts=counts,
        table_cluster_by_month=cbm,
        table_month_by_cluster=mbc,
        table_medians=medians,
        garbage_candidates=garbage,
        contrasts=contrasts,
        figure_path=fig,
    )


def run(cfg: PipelineConfig):
    """Run the stages selected by ``cfg.stage``.

    Returns the ``ClusterReport`` when the report stage ran, otherwise ``None``.
    """
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("setup", f"cannot create output directory {out}: {exc}") from exc
    if cfg.stage in ("all", "features"):
        run_features(cfg)
    if cfg.stage in ("all", "cluster"):
        run_cluster(cfg)
    if cfg.stage in ("all", "report"):
        return run_report(cfg)
    return None
