"""Dirichlet-process Gaussian mixture: prior calibration, collapsed Gibbs, VI point estimate.

The base measure is normal-inverse-Wishart,

    Sigma_j ~ IW(nu0, Sigma0),   mu_j | Sigma_j ~ N(m0, Sigma_j / k0),

with hyperpriors m0 ~ N(m1, S1), k0 ~ Gamma(tau1, rate=xi1) and
Sigma0 ~ Wishart(nu1, Sigma1). Assignments are resampled with the cluster
parameters integrated out; (mu_j, Sigma_j) are drawn once per sweep only to
feed the hyperparameter full conditionals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln
from scipy.stats import invwishart, wishart

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# concentration parameter


def expected_clusters(n: int, alpha: float) -> float:
    """Prior mean number of CRP tables, ``sum_{i=1..n} alpha / (alpha + i - 1)``."""
    i = np.arange(1, n + 1, dtype=np.float64)
    return float(np.sum(alpha / (alpha + (i - 1.0))))


def solve_alpha(n: int, k_target: float, tol: float = 1e-8) -> float:
    """Concentration giving ``E[K | n, alpha] = k_target``, found by bisection."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        logger.warning("solve_alpha: n = 1 gives E[K] = 1 for every alpha; using alpha = 1")
        return 1.0
    if not 1 < k_target < n:
        raise ValueError(f"k_target must lie strictly between 1 and n={n}, got {k_target}")
    lo, hi = 0.0, 1.0
    while expected_clusters(n, hi) < k_target:
        lo, hi = hi, hi * 2.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        e = expected_clusters(n, mid)
        if abs(e - k_target) < tol:
            return mid
        if e < k_target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# priors and partitions


@dataclass
class DPMMPriors:
    alpha: float
    m1: np.ndarray
    S1: np.ndarray
    nu0: float | None = None
    tau1: float = 1.0
    xi1: float = 1.0
    nu1: float | None = None
    Sigma1: np.ndarray | None = None

    def __post_init__(self):
        self.m1 = np.asarray(self.m1, dtype=np.float64).ravel()
        p = len(self.m1)
        self.S1 = np.asarray(self.S1, dtype=np.float64).reshape(p, p)
        if self.nu0 is None:
            self.nu0 = float(p)
        if self.nu1 is None:
            self.nu1 = float(p + 2)
        if self.Sigma1 is None:
            self.Sigma1 = self.S1 / 2.0
        self.Sigma1 = np.asarray(self.Sigma1, dtype=np.float64).reshape(p, p)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.nu0 < p or self.nu1 < p:
            raise ValueError("nu0 and nu1 must be >= dimension")
        for name in ("S1", "Sigma1"):
            m = getattr(self, name)
            if not np.allclose(m, m.T) or np.any(np.linalg.eigvalsh(m) <= 0):
                raise ValueError(f"{name} must be symmetric positive definite")

    @property
    def p(self):
        return len(self.m1)

    @classmethod
    def empirical(cls, X, k_target=5.0, alpha=None, ridge=1e-6):
        """Calibrate on the data: m1 = column means, S1 = covariance, Sigma1 = S1 / 2."""
        X = np.asarray(X, dtype=np.float64)
        n, p = X.shape
        m1 = X.mean(axis=0)
        S1 = np.atleast_2d(np.cov(X, rowvar=False, bias=False)) if n > 1 else np.eye(p)
        ev = np.linalg.eigvalsh(S1)
        tr = max(np.trace(S1), 1.0 if p else 0.0)
        if ev.min() <= 1e-10 * max(ev.max(), 1e-300):
            S1 = S1 + ridge * tr * np.eye(p)
        if alpha is None:
            alpha = solve_alpha(n, k_target) if n > 1 else 1.0
        return cls(alpha=alpha, m1=m1, S1=S1)


def canonical_labels(labels) -> np.ndarray:
    """Relabel blocks 0..K-1 in order of first occurrence."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv].astype(np.int64)


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", canonical_labels(self.labels))

    @property
    def K(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self):
        return len(self.labels)

    def key(self) -> bytes:
        return self.labels.astype(np.int32).tobytes()

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash(self.key())


# ---------------------------------------------------------------------------
# NIW posterior and predictive


def niw_posterior(n, s, sxx, m0, k0, nu0, Sigma0):
    """Posterior NIW parameters ``(m_n, k_n, nu_n, Psi_n)`` from count, sum and sum of outer products."""
    k_n = k0 + n
    nu_n = nu0 + n
    m_n = (k0 * m0 + s) / k_n
    psi = Sigma0 + sxx + k0 * np.outer(m0, m0) - k_n * np.outer(m_n, m_n)
    psi = 0.5 * (psi + psi.T)
    return m_n, k_n, nu_n, psi


class _Predictive:
    """Multivariate Student-t posterior predictive of one NIW posterior."""

    __slots__ = ("loc", "linv", "df", "const")

    def __init__(self, m_n, k_n, nu_n, psi):
        p = len(m_n)
        df = nu_n - p + 1.0
        scale = psi * ((k_n + 1.0) / (k_n * df))
        try:
            chol = np.linalg.cholesky(scale)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("predictive scale matrix is not positive definite") from exc
        self.loc = m_n
        self.linv = np.linalg.inv(chol)
        self.df = df
        self.const = (
            math.lgamma(0.5 * (df + p))
            - math.lgamma(0.5 * df)
            - 0.5 * p * math.log(df * math.pi)
            - float(np.sum(np.log(np.diagonal(chol))))
        )

    def logpdf(self, x):
        y = self.linv @ (np.asarray(x) - self.loc)
        p = len(self.loc)
        return self.const - 0.5 * (self.df + p) * np.log1p(y @ y / self.df)


def log_predictive(x, n, s, sxx, m0, k0, nu0, Sigma0) -> float:
    """Log posterior-predictive density of ``x`` for a cluster with stats ``(n, s, sxx)``.

    ``n = 0`` (with zero sums) gives the prior predictive of a new cluster.
    """
    p = len(m0)
    s = np.zeros(p) if s is None else np.asarray(s, dtype=np.float64)
    sxx = np.zeros((p, p)) if sxx is None else np.asarray(sxx, dtype=np.float64)
    return float(_Predictive(*niw_posterior(n, s, sxx, m0, k0, nu0, Sigma0)).logpdf(np.atleast_1d(x)))


# ---------------------------------------------------------------------------
# hyperparameter full conditionals


def m0_conditional(mus, Sigmas, k0, m1, S1):
    """Gaussian full conditional of m0: returns ``(mean, covariance)``."""
    S1_inv = np.linalg.inv(S1)
    prec = S1_inv.copy()
    lin = S1_inv @ m1
    for mu, sig in zip(mus, Sigmas):
        si = np.linalg.inv(sig)
        prec += k0 * si
        lin += k0 * si @ mu
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    return cov @ lin, cov


def k0_conditional(mus, Sigmas, m0, tau1, xi1):
    """Gamma full conditional of k0: returns ``(shape, rate)``."""
    p = len(m0)
    quad = 0.0
    for mu, sig in zip(mus, Sigmas):
        d = mu - m0
        quad += d @ np.linalg.solve(sig, d)
    return tau1 + 0.5 * len(mus) * p, xi1 + 0.5 * quad


def sigma0_conditional(Sigmas, nu0, nu1, Sigma1):
    """Wishart full conditional of Sigma0: returns ``(df, scale)``."""
    prec = np.linalg.inv(Sigma1)
    for sig in Sigmas:
        prec = prec + np.linalg.inv(sig)
    scale = np.linalg.inv(prec)
    return nu1 + len(Sigmas) * nu0, 0.5 * (scale + scale.T)


# ---------------------------------------------------------------------------
# sampler


@dataclass
class GibbsState:
    z: np.ndarray  # cluster slot per item
    counts: np.ndarray  # per slot
    sums: np.ndarray  # (slots, p)
    sxx: np.ndarray  # (slots, p, p)
    m0: np.ndarray
    k0: float
    Sigma0: np.ndarray
    mus: dict = field(default_factory=dict)  # slot -> instantiated mean
    Sigmas: dict = field(default_factory=dict)

    @property
    def active(self):
        return np.flatnonzero(self.counts > 0)

    @property
    def K(self):
        return int(np.count_nonzero(self.counts))

    def partition(self) -> Partition:
        return Partition(self.z.copy())


class GibbsSampler:
    """Collapsed CRP Gibbs sampler over a fixed data matrix.

    Data are centred on ``m1`` internally; the model is shift-equivariant so
    only reported hyperparameters are shifted back.
    """

    def __init__(self, X, priors: DPMMPriors, seed=0, init="kmeans5", check_normalization=False):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be an (N, p) matrix")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if X.shape[1] != priors.p:
            raise ValueError("prior dimension does not match data")
        self.priors = priors
        self.shift = priors.m1.copy()
        self.X = X - self.shift
        self.N, self.p = self.X.shape
        self.rng = np.random.default_rng(seed)
        self.check_normalization = check_normalization
        self.state = self._initial_state(self._initial_labels(init))
        self._build_caches()

    # -- state ---------------------------------------------------------------

    def _initial_labels(self, init):
        if isinstance(init, str):
            if init == "one":
                return np.zeros(self.N, dtype=np.int64)
            if init == "singletons":
                return np.arange(self.N)
            if init.startswith("kmeans"):
                from sklearn.cluster import KMeans

                k = int(init[6:] or 5)
                km = KMeans(n_clusters=min(k, self.N), n_init=4, random_state=int(self.rng.integers(2**31)))
                return km.fit_predict(self.X).astype(np.int64)
            raise ValueError(f"unknown init {init!r}")
        labels = canonical_labels(init)
        if len(labels) != self.N:
            raise ValueError("initial labels have the wrong length")
        return labels

    def _initial_state(self, labels):
        N, p = self.N, self.p
        K = int(labels.max()) + 1
        cap = max(8, 2 * K)
        counts = np.zeros(cap, dtype=np.int64)
        sums = np.zeros((cap, p))
        sxx = np.zeros((cap, p, p))
        for k in range(K):
            xs = self.X[labels == k]
            counts[k] = len(xs)
            sums[k] = xs.sum(axis=0)
            sxx[k] = xs.T @ xs
        pr = self.priors
        return GibbsState(
            z=labels.copy(),
            counts=counts,
            sums=sums,
            sxx=sxx,
            m0=np.zeros(p),
            k0=pr.tau1 / pr.xi1,
            Sigma0=pr.nu1 * pr.Sigma1,
        )

    def _grow(self):
        st = self.state
        cap = len(st.counts)
        st.counts = np.concatenate([st.counts, np.zeros(cap, dtype=np.int64)])
        st.sums = np.concatenate([st.sums, np.zeros((cap, self.p))])
        st.sxx = np.concatenate([st.sxx, np.zeros((cap, self.p, self.p))])
        self._loc = np.concatenate([self._loc, np.zeros((cap, self.p))])
        self._linv = np.concatenate([self._linv, np.zeros((cap, self.p, self.p))])
        self._df = np.concatenate([self._df, np.ones(cap)])
        self._const = np.concatenate([self._const, np.zeros(cap)])

    def _free_slot(self):
        free = np.flatnonzero(self.state.counts == 0)
        if len(free) == 0:
            self._grow()
            free = np.flatnonzero(self.state.counts == 0)
        return int(free[0])

    def _posterior(self, n, s, sxx):
        st = self.state
        return niw_posterior(n, s, sxx, st.m0, st.k0, self.priors.nu0, st.Sigma0)

    def _refresh(self, k):
        st = self.state
        pred = _Predictive(*self._posterior(st.counts[k], st.sums[k], st.sxx[k]))
        self._loc[k] = pred.loc
        self._linv[k] = pred.linv
        self._df[k] = pred.df
        self._const[k] = pred.const

    def _build_caches(self):
        cap = len(self.state.counts)
        self._loc = np.zeros((cap, self.p))
        self._linv = np.zeros((cap, self.p, self.p))
        self._df = np.ones(cap)
        self._const = np.zeros(cap)
        for k in self.state.active:
            self._refresh(k)
        self._prior_pred = _Predictive(*self._posterior(0, np.zeros(self.p), np.zeros((self.p, self.p))))

    # -- moves ---------------------------------------------------------------

    def assignment_probabilities(self, i):
        """Normalised reassignment probabilities for item ``i`` (already removed).

        Returns ``(slots, probs)`` where the final entry corresponds to a new cluster.
        """
        st = self.state
        x = self.X[i]
        act = st.active
        y = np.einsum("kij,kj->ki", self._linv[act], x - self._loc[act])
        df = self._df[act]
        logp = self._const[act] - 0.5 * (df + self.p) * np.log1p(np.einsum("ki,ki->k", y, y) / df)
        logw = np.empty(len(act) + 1)
        logw[:-1] = np.log(st.counts[act]) + logp
        logw[-1] = np.log(self.priors.alpha) + self._prior_pred.logpdf(x)
        w = np.exp(logw - logw.max())
        probs = w / w.sum()
        if self.check_normalization:
            assert abs(probs.sum() - 1.0) < 1e-12
        return act, probs

    def _remove(self, i):
        st = self.state
        k = st.z[i]
        x = self.X[i]
        st.counts[k] -= 1
        if st.counts[k] == 0:
            st.sums[k] = 0.0
            st.sxx[k] = 0.0
        else:
            st.sums[k] -= x
            st.sxx[k] -= np.outer(x, x)
            self._refresh(k)

    def _add(self, i, k):
        st = self.state
        x = self.X[i]
        st.z[i] = k
        st.counts[k] += 1
        st.sums[k] += x
        st.sxx[k] += np.outer(x, x)
        self._refresh(k)

    def _snapshot(self, k):
        st = self.state
        return (st.sums[k].copy(), st.sxx[k].copy(), self._loc[k].copy(), self._linv[k].copy(),
                self._df[k], self._const[k])

    def _restore(self, i, k, snap):
        # the item went back where it came from: reuse the saved cache
        st = self.state
        st.z[i] = k
        st.counts[k] += 1
        st.sums[k], st.sxx[k], self._loc[k], self._linv[k], self._df[k], self._const[k] = snap

    def sweep_assignments(self):
        for i in range(self.N):
            old = int(self.state.z[i])
            snap = self._snapshot(old)
            self._remove(i)
            act, probs = self.assignment_probabilities(i)
            u = self.rng.random()
            j = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
            j = min(j, len(probs) - 1)
            k = int(act[j]) if j < len(act) else self._free_slot()
            if k == old:
                self._restore(i, k, snap)
            else:
                self._add(i, k)

    def instantiate(self):
        """Draw (mu_j, Sigma_j) from each cluster's posterior NIW."""
        st = self.state
        st.mus, st.Sigmas = {}, {}
        for k in st.active:
            m_n, k_n, nu_n, psi = self._posterior(st.counts[k], st.sums[k], st.sxx[k])
            sig = np.atleast_2d(invwishart.rvs(df=nu_n, scale=psi, random_state=self.rng))
            sig = 0.5 * (sig + sig.T)
            mu = self.rng.multivariate_normal(m_n, sig / k_n, method="cholesky")
            st.mus[int(k)], st.Sigmas[int(k)] = mu, sig

    def resample_hyperparameters(self):
        st, pr = self.state, self.priors
        mus = [st.mus[k] for k in sorted(st.mus)]
        sigs = [st.Sigmas[k] for k in sorted(st.Sigmas)]
        mean, cov = m0_conditional(mus, sigs, st.k0, np.zeros(self.p), pr.S1)
        st.m0 = self.rng.multivariate_normal(mean, cov, method="cholesky")
        shape, rate = k0_conditional(mus, sigs, st.m0, pr.tau1, pr.xi1)
        st.k0 = float(self.rng.gamma(shape, 1.0 / rate))
        df, scale = sigma0_conditional(sigs, pr.nu0, pr.nu1, pr.Sigma1)
        s0 = np.atleast_2d(wishart.rvs(df=df, scale=scale, random_state=self.rng))
        st.Sigma0 = 0.5 * (s0 + s0.T)
        self._build_caches()

    def sweep(self):
        self.sweep_assignments()
        self.instantiate()
        self.resample_hyperparameters()

    # -- diagnostics -----------------------------------------------------------

    def loglik(self) -> float:
        """Gaussian log-likelihood of the data under the instantiated cluster parameters."""
        st = self.state
        total = 0.0
        for k, mu in st.mus.items():
            xs = self.X[st.z == k] - mu
            c = linalg.cholesky(st.Sigmas[k], lower=True)
            y = linalg.solve_triangular(c, xs.T, lower=True)
            total += -0.5 * np.sum(y * y) - len(xs) * (np.sum(np.log(np.diag(c))) + 0.5 * self.p * np.log(2 * np.pi))
        return float(total)

    def stats_drift(self, resync=True) -> float:
        """Max abs difference between maintained and recomputed sufficient statistics."""
        st = self.state
        worst = 0.0
        for k in range(len(st.counts)):
            xs = self.X[st.z == k]
            n = len(xs)
            s = xs.sum(axis=0)
            sxx = xs.T @ xs
            worst = max(worst, abs(n - st.counts[k]), np.max(np.abs(s - st.sums[k])), np.max(np.abs(sxx - st.sxx[k])))
            if resync:
                st.counts[k], st.sums[k], st.sxx[k] = n, s, sxx
        if resync:
            self._build_caches()
        return float(worst)

    @property
    def m0(self):
        return self.state.m0 + self.shift


@dataclass
class ChainResult:
    samples: list  # post-burn-in Partitions
    trace: list  # (iter, K, loglik)
    sampler: GibbsSampler
    max_stats_drift: float = 0.0


def run_chain(X, priors: DPMMPriors, iters=10000, burnin=4000, seed=0, thin=1, init="kmeans5", resync_every=100, progress=None):
    """Run the sampler and keep every ``thin``-th post-burn-in partition."""
    if iters <= burnin:
        raise ValueError(f"iters={iters} must exceed burnin={burnin} to leave any samples")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need an (N, p) matrix with N >= 2")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    sampler = GibbsSampler(X, priors, seed=seed, init=init)
    samples, trace = [], []
    drift = 0.0
    for it in range(1, iters + 1):
        sampler.sweep()
        K = sampler.state.K
        trace.append((it, K, sampler.loglik()))
        if resync_every and it % resync_every == 0:
            drift = max(drift, sampler.stats_drift())
            logger.debug("sweep %d: K=%d", it, K)
        if it > burnin and (it - burnin) % thin == 0:
            samples.append(sampler.state.partition())
        if progress is not None:
            progress(it, K)
    logger.info("chain finished: %d samples, final K=%d", len(samples), sampler.state.K)
    return ChainResult(samples, trace, sampler, drift)


# ---------------------------------------------------------------------------
# posterior summaries


def _unique_partitions(samples):
    """Unique partitions in first-seen order with their multiplicities."""
    index, uniq, counts = {}, [], []
    for s in samples:
        key = s.key()
        if key in index:
            counts[index[key]] += 1
        else:
            index[key] = len(uniq)
            uniq.append(s)
            counts.append(1)
    return uniq, np.asarray(counts, dtype=np.float64)


def posterior_similarity(samples) -> np.ndarray:
    """Co-clustering frequencies over the samples (symmetric, unit diagonal)."""
    if not samples:
        raise ValueError("need at least one sample")
    uniq, counts = _unique_partitions(samples)
    n = len(uniq[0])
    psm = np.zeros((n, n))
    for part, c in zip(uniq, counts):
        onehot = np.zeros((n, part.K))
        onehot[np.arange(n), part.labels] = 1.0
        psm += c * (onehot @ onehot.T)
    return psm / counts.sum()


def _entropy_from_counts(counts, n):
    # sorted so the sum does not depend on label order, which keeps VI exactly symmetric
    p = np.sort(counts[counts > 0]) / n
    return float(-np.sum(p * np.log(p)))


def variation_of_information(a, b) -> float:
    """VI(a, b) = H(a) + H(b) - 2 I(a, b), in nats."""
    a = canonical_labels(getattr(a, "labels", a))
    b = canonical_labels(getattr(b, "labels", b))
    if len(a) != len(b):
        raise ValueError("partitions differ in size")
    n = len(a)
    kb = int(b.max()) + 1
    joint = np.bincount(a * kb + b)
    ha = _entropy_from_counts(np.bincount(a), n)
    hb = _entropy_from_counts(np.bincount(b), n)
    hab = _entropy_from_counts(joint, n)
    return max(2.0 * hab - (ha + hb), 0.0)


def expected_vi_losses(samples):
    """Monte Carlo expected VI for each unique sampled partition.

    Returns ``(unique_partitions, losses)``.
    """
    if not samples:
        raise ValueError("need at least one sample")
    uniq, w = _unique_partitions(samples)
    w = w / w.sum()
    L = np.stack([u.labels for u in uniq])
    U, n = L.shape
    kmax = int(L.max()) + 1
    h = np.array([_entropy_from_counts(np.bincount(row), n) for row in L])
    rows = np.arange(U)[:, None]
    losses = np.empty(U)
    for c in range(U):
        lab = L[c]
        kc = int(lab.max()) + 1
        codes = (rows * kc + lab[None, :]) * kmax + L
        joint = np.bincount(codes.ravel(), minlength=U * kc * kmax).reshape(U, kc * kmax) / n
        with np.errstate(divide="ignore", invalid="ignore"):
            hj = -np.sum(np.where(joint > 0, joint * np.log(joint), 0.0), axis=1)
        vi = np.maximum(2.0 * hj - h[c] - h, 0.0)
        losses[c] = float(w @ vi)
    return uniq, losses


def vi_point_estimate(samples) -> Partition:
    """Sampled partition minimising the posterior expected variation of information."""
    uniq, losses = expected_vi_losses(samples)
    return uniq[int(np.argmin(losses))]


# ---------------------------------------------------------------------------
# serialisation


def encode_rle(labels) -> str:
    labels = np.asarray(labels)
    out, start = [], 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            out.append(f"{labels[start]}x{i - start}")
            start = i
    return " ".join(out)


def decode_rle(line: str) -> np.ndarray:
    vals = []
    for tok in line.split():
        v, c = tok.split("x")
        vals.extend([int(v)] * int(c))
    return np.asarray(vals, dtype=np.int64)


def write_partition_samples(path, samples) -> None:
    """One run-length encoded partition per line: ``label x count`` tokens."""
    with open(path, "w") as fh:
        for s in samples:
            fh.write(encode_rle(s.labels) + "\n")


def read_partition_samples(path):
    with open(path) as fh:
        return [Partition(decode_rle(line)) for line in fh if line.strip()]
