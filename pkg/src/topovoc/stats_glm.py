"""Multinomial logit contrasts of clusters on acoustic descriptors."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

logger = logging.getLogger(__name__)

RIDGE = 1e-6
SEPARATION_COEF = 20.0


@dataclass
class MultinomialFit:
    reference: object
    outcomes: list  # non-reference cluster ids, row order of ``coef``
    predictors: list  # "intercept" followed by descriptor names
    coef: np.ndarray  # (K-1, d+1)
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    converged: bool
    ridge: bool
    loglik: float
    n_iter: int
    loglik_path: list = field(default_factory=list)

    def coefficient(self, outcome, predictor):
        return self.coef[self.outcomes.index(outcome), self.predictors.index(predictor)]


def standardize(X):
    """Column z-scores; returns ``(Z, mean, scale, kept_mask)`` with constant columns removed."""
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    keep = scale > 1e-12
    return (X[:, keep] - mean[keep]) / scale[keep], mean, scale, keep


def _eta(beta, Xd):
    """Linear predictors with the reference column (zeros) first: shape ``(n, K)``."""
    return np.hstack([np.zeros((len(Xd), 1)), Xd @ beta.T])


def log_likelihood(beta, Xd, Y, ridge=0.0):
    """Multinomial log-likelihood; ``Y`` is one-hot ``(n, K)`` with the reference first."""
    eta = _eta(beta, Xd)
    ll = float(np.sum(Y * eta) - np.sum(logsumexp(eta, axis=1)))
    return ll - 0.5 * ridge * float(np.sum(beta**2))


def probabilities(beta, Xd):
    eta = _eta(beta, Xd)
    return np.exp(eta - logsumexp(eta, axis=1, keepdims=True))


def gradient(beta, Xd, Y, ridge=0.0):
    P = probabilities(beta, Xd)
    return (Y[:, 1:] - P[:, 1:]).T @ Xd - ridge * beta


def hessian(beta, Xd, ridge=0.0):
    """Hessian of the log-likelihood over ``beta.ravel()`` (outcome-major)."""
    P = probabilities(beta, Xd)[:, 1:]
    m, q = P.shape[1], Xd.shape[1]
    H = np.empty((m * q, m * q))
    for a in range(m):
        for b in range(a, m):
            w = P[:, a] * ((a == b) - P[:, b])
            block = -(Xd * w[:, None]).T @ Xd
            H[a * q : (a + 1) * q, b * q : (b + 1) * q] = block
            H[b * q : (b + 1) * q, a * q : (a + 1) * q] = block.T
    return H - ridge * np.eye(m * q)


def _newton(Xd, Y, ridge, max_iter=100, tol=1e-10):
    m, q = Y.shape[1] - 1, Xd.shape[1]
    beta = np.zeros((m, q))
    ll = log_likelihood(beta, Xd, Y, ridge)
    path = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = gradient(beta, Xd, Y, ridge).ravel()
        H = hessian(beta, Xd, ridge)
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, g, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step.reshape(m, q)
            ll_new = log_likelihood(cand, Xd, Y, ridge)
            if ll_new >= ll - 1e-12 or t < 1e-10:
                break
            t *= 0.5
        if ll_new < ll:
            converged = True  # no ascent direction left at machine precision
            break
        beta, ll_old, ll = cand, ll, ll_new
        path.append(ll)
        if abs(ll - ll_old) < tol * (1 + abs(ll)) and np.max(np.abs(t * step)) < 1e-8:
            converged = True
            break
    return beta, ll, converged, it, path


def fit_multinomial(profiles, labels, reference, names=None, max_iter=100) -> MultinomialFit:
    """Maximum-likelihood multinomial logit with ``reference`` as the baseline cluster.

    Predictors are z-scored first. Clusters with a single member are dropped.
    When the unpenalised fit diverges (separation) it is redone with a small
    ridge penalty and ``ridge`` is set on the result.
    """
    X = np.asarray(profiles, dtype=np.float64)
    labels = np.asarray(labels)
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    clusters, counts = np.unique(labels, return_counts=True)
    singles = clusters[counts < 2]
    if len(singles):
        logger.warning("fit_multinomial: dropping singleton cluster(s) %s", list(singles))
        keep = ~np.isin(labels, singles)
        X, labels = X[keep], labels[keep]
        clusters = clusters[counts >= 2]
    if reference not in clusters:
        raise ValueError(f"reference cluster {reference!r} not present (or singleton)")
    if len(clusters) < 2:
        raise ValueError("need at least two clusters")
    Z, _, _, kept = standardize(X)
    names = [n for n, k in zip(names, kept) if k]
    Xd = np.hstack([np.ones((len(Z), 1)), Z])
    outcomes = [c for c in clusters.tolist() if c != reference]
    order = [reference] + outcomes
    Y = (labels[:, None] == np.asarray(order)[None, :]).astype(np.float64)

    beta, ll, conv, it, path = _newton(Xd, Y, 0.0, max_iter)
    ridge = False
    if not conv or np.max(np.abs(beta)) > SEPARATION_COEF:
        logger.warning("fit_multinomial(ref=%s): separation suspected, refitting with ridge %g", reference, RIDGE)
        beta, ll, conv, it, path = _newton(Xd, Y, RIDGE, max_iter=max(max_iter, 500))
        ridge = True
    info = -hessian(beta, Xd, RIDGE if ridge else 0.0)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0)).reshape(beta.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, 0.0)
    p = np.clip(2.0 * norm.sf(np.abs(z)), 0.0, 1.0)
    return MultinomialFit(
        reference=reference,
        outcomes=outcomes,
        predictors=["intercept"] + names,
        coef=beta,
        se=se,
        z=z,
        p=p,
        converged=conv,
        ridge=ridge,
        loglik=log_likelihood(beta, Xd, Y),
        n_iter=it,
        loglik_path=path,
    )


def fit_all_references(profiles, labels, names=None):
    return [fit_multinomial(profiles, labels, r, names) for r in np.unique(labels).tolist()]


def contrast_report(fits, alpha_level=0.05):
    """Descriptors significant against a strict majority of the other clusters, per reference."""
    report = {}
    for fit in fits:
        m = len(fit.outcomes)
        hits = []
        for j, name in enumerate(fit.predictors):
            if name == "intercept":
                continue
            n_sig = int(np.sum(fit.p[:, j] < alpha_level))
            if 2 * n_sig > m:
                hits.append(name)
        report[fit.reference] = hits
    return report


def write_fits_csv(path, fits) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["reference", "outcome", "descriptor", "coef", "se", "z", "p", "ridge"])
        for f in fits:
            for a, outcome in enumerate(f.outcomes):
                for j, name in enumerate(f.predictors):
                    w.writerow([f.reference, outcome, name, repr(float(f.coef[a, j])), repr(float(f.se[a, j])),
                                repr(float(f.z[a, j])), repr(float(f.p[a, j])), int(f.ridge)])
