"""Rank tests, logistic regression with AIC, bootstrap model comparison, rate ratios."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import stats as sps

from .errors import DataError

EXACT = "EXACT"
NORMAL_APPROX = "NORMAL_APPROX"
W_CONVENTION = "Mann-Whitney U of the first sample: rank sum minus n1(n1+1)/2"
R_CONVENTION = "|Z| / sqrt(N), Z from the continuity-corrected normal approximation"


@dataclass
class RankTestResult:
    test: str
    statistic: float
    z: float
    p: float
    r: float
    method: str
    n1: int
    n2: int | None = None

    def to_dict(self):
        return asdict(self)


@lru_cache(maxsize=None)
def _rank_sum_counts(n1, n2):
    """Number of labelings giving each U in 0..n1*n2 (tie-free null distribution)."""
    if n1 == 0 or n2 == 0:
        return np.ones(1)
    # the largest observation is either an x (adds n2 to U) or a y
    f = np.zeros(n1 * n2 + 1)
    from_x = _rank_sum_counts(n1 - 1, n2)
    from_y = _rank_sum_counts(n1, n2 - 1)
    f[n2:n2 + from_x.size] += from_x
    f[:from_y.size] += from_y
    return f


@lru_cache(maxsize=None)
def _signed_rank_counts(n):
    """Number of sign patterns giving each V in 0..n(n+1)/2."""
    f = np.zeros(n * (n + 1) // 2 + 1)
    f[0] = 1.0
    top = 0
    for k in range(1, n + 1):
        f[k:top + k + 1] += f[:top + 1].copy()
        top += k
    return f


def _two_sided_exact(counts, stat):
    stat = int(round(stat))
    total = counts.sum()
    lower = counts[:stat + 1].sum() / total
    upper = counts[stat:].sum() / total
    return float(min(1.0, 2.0 * min(lower, upper)))


def _corrected_z(stat, mean, sd):
    if sd <= 0:
        return 0.0
    dev = stat - mean
    adj = max(abs(dev) - 0.5, 0.0)
    return float(math.copysign(adj, dev) / sd) if adj > 0 else 0.0


def wilcoxon_rank_sum(x, y, exact_limit=8) -> RankTestResult:
    """Two-sided Wilcoxon rank-sum test reporting W as the Mann-Whitney U of ``x``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise DataError("rank-sum test needs two non-empty samples")
    combined = np.concatenate([x, y])
    ranks = sps.rankdata(combined)
    W = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    N = n1 + n2
    _, tie_counts = np.unique(combined, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts))
    var = n1 * n2 / 12.0 * ((N + 1) - tie_term / (N * (N - 1))) if N > 1 else 0.0
    z = _corrected_z(W, n1 * n2 / 2.0, math.sqrt(max(var, 0.0)))
    if n1 <= exact_limit and n2 <= exact_limit and not has_ties:
        p = _two_sided_exact(_rank_sum_counts(n1, n2), W)
        method = EXACT
    else:
        p = 1.0 if var <= 0 else float(min(1.0, 2.0 * sps.norm.sf(abs(z))))
        method = NORMAL_APPROX
    r = min(1.0, abs(z) / math.sqrt(N))
    return RankTestResult("wilcoxon_rank_sum", W, z, p, r, method, n1, n2)


def wilcoxon_signed_rank(x, y=None, exact_limit=12) -> RankTestResult:
    """Two-sided signed-rank test on paired samples (or on differences when ``y`` is None).

    Zero differences are dropped; V is the rank sum of the positive ones.
    """
    d = np.asarray(x, dtype=float).ravel()
    if y is not None:
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(d):
            raise DataError("paired samples must have equal length")
        d = d - y
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise DataError("signed-rank test needs at least one nonzero difference "
                        "(all paired differences are zero)")
    absd = np.abs(d)
    ranks = sps.rankdata(absd)
    V = float(ranks[d > 0].sum())
    _, tie_counts = np.unique(absd, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    z = _corrected_z(V, n * (n + 1) / 4.0, math.sqrt(max(var, 0.0)))
    if n <= exact_limit and not has_ties:
        p = _two_sided_exact(_signed_rank_counts(n), V)
        method = EXACT
    else:
        p = 1.0 if var <= 0 else float(min(1.0, 2.0 * sps.norm.sf(abs(z))))
        method = NORMAL_APPROX
    r = min(1.0, abs(z) / math.sqrt(n))
    return RankTestResult("wilcoxon_signed_rank", V, z, p, r, method, n)


@dataclass
class GlmFit:
    coefficients: np.ndarray
    loglik: float
    aic: float
    k: int
    converged: bool
    iterations: int
    grad_norm: float
    separated: bool = False

    def to_dict(self):
        d = asdict(self)
        d["coefficients"] = [float(c) for c in self.coefficients]
        return d


# |linear predictor| beyond this means fitted probabilities are 0/1 to
# double precision: the data are (quasi-)separated.
_ETA_LIMIT = 30.0


def _loglik(X, y, beta):
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def logistic_aic(predictors, labels, max_iter=100, tol=1e-8) -> GlmFit:
    """Maximum-likelihood logistic regression (intercept added) by IRLS."""
    Z = np.asarray(predictors, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    y = np.asarray(labels, dtype=float).ravel()
    n, d = Z.shape
    if len(y) != n:
        raise DataError("one label per predictor row is required")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be binary 0/1")
    if y.min() == y.max():
        raise DataError("logistic regression needs both label classes")
    if n <= d + 1:
        raise DataError(f"logistic regression needs more than {d + 1} rows, got {n}")
    X = np.column_stack([np.ones(n), Z])
    beta = np.zeros(d + 1)
    ll = _loglik(X, y, beta)
    separated = False
    grad_norm = np.inf
    it = 0
    while it < max_iter:
        eta = X @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (y - p)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            break
        it += 1
        w = p * (1.0 - p)
        H = (X.T * w) @ X
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        for _ in range(50):
            cand = beta + t * step
            ll_new = _loglik(X, y, cand)
            if ll_new >= ll:
                break
            t *= 0.5
        else:
            break
        beta, ll = cand, ll_new
        if np.max(np.abs(X @ beta)) > _ETA_LIMIT:
            separated = True
            break
    eta = X @ beta
    p = 1.0 / (1.0 + np.exp(-eta))
    grad_norm = float(np.linalg.norm(X.T @ (y - p)))
    ll = _loglik(X, y, beta)
    k = d + 1
    converged = bool(grad_norm < tol and not separated)
    return GlmFit(beta, ll, 2.0 * k - 2.0 * ll, k, converged, it, grad_norm, separated)


@dataclass
class BootstrapComparison:
    aic_a: np.ndarray
    aic_b: np.ndarray
    mean_a: float
    mean_b: float
    mean_difference: float
    t: float
    df: float
    p: float
    ci95: tuple
    seed: int
    replicates: int
    attempts: int
    preferred: str | None
    method: str = "Welch two-sample t-test on replicate AICs (A - B)"
    full_fit_a: GlmFit | None = None
    full_fit_b: GlmFit | None = None

    def to_dict(self, include_samples=False):
        d = {k: v for k, v in asdict(self).items()
             if k not in ("aic_a", "aic_b", "full_fit_a", "full_fit_b")}
        d["ci95"] = [float(c) for c in self.ci95]
        d["full_fit_a"] = self.full_fit_a.to_dict() if self.full_fit_a else None
        d["full_fit_b"] = self.full_fit_b.to_dict() if self.full_fit_b else None
        if include_samples:
            d["aic_a"] = self.aic_a.tolist()
            d["aic_b"] = self.aic_b.tolist()
        return d


def replicate_rng(seed, counter):
    """Generator for bootstrap draw ``counter``; independent of draw order."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(counter),)))


def welch_t(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = len(a), len(b)
    diff = float(a.mean() - b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    se2 = va / na + vb / nb
    if se2 == 0:
        return (0.0 if diff == 0 else math.copysign(math.inf, diff)), float(na + nb - 2), \
            (1.0 if diff == 0 else 0.0), (diff, diff), diff
    se = math.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    t = diff / se
    p = float(2.0 * sps.t.sf(abs(t), df))
    crit = float(sps.t.ppf(0.975, df))
    return float(t), float(df), p, (diff - crit * se, diff + crit * se), diff


def bootstrap_aic_compare(scores_a, scores_b, labels, replicates=1000, seed=None,
                          max_attempts_factor=100) -> BootstrapComparison:
    """Resample units (same indices for both models) and compare logistic AICs."""
    if seed is None:
        raise DataError("bootstrap comparison requires an explicit seed")
    A = np.asarray(scores_a, dtype=float)
    B = np.asarray(scores_b, dtype=float)
    y = np.asarray(labels, dtype=float).ravel()
    n = len(y)
    if A.shape[0] != n or B.shape[0] != n:
        raise DataError("both score sets need one row per labelled unit")
    if n < 10:
        raise DataError(f"bootstrap comparison needs at least 10 units, got {n}")
    aic_a, aic_b = [], []
    attempts = 0
    limit = replicates * max_attempts_factor
    while len(aic_a) < replicates:
        if attempts >= limit:
            raise DataError(f"could not draw {replicates} two-class resamples in {limit} attempts")
        idx = replicate_rng(seed, attempts).integers(0, n, size=n)
        attempts += 1
        yi = y[idx]
        if yi.min() == yi.max():
            continue
        aic_a.append(logistic_aic(A[idx], yi).aic)
        aic_b.append(logistic_aic(B[idx], yi).aic)
    aic_a = np.array(aic_a)
    aic_b = np.array(aic_b)
    t, df, p, ci, diff = welch_t(aic_a, aic_b)
    preferred = None if diff == 0 else ("A" if diff < 0 else "B")
    return BootstrapComparison(aic_a, aic_b, float(aic_a.mean()), float(aic_b.mean()), diff, t, df, p,
                               ci, int(seed), int(replicates), attempts, preferred,
                               full_fit_a=logistic_aic(A, y), full_fit_b=logistic_aic(B, y))


@dataclass
class RateRatio:
    irr: float
    ci95: tuple
    p: float
    log_se: float
    degenerate: bool = False

    def to_dict(self):
        return {"irr": self.irr, "ci95": [float(c) for c in self.ci95], "p": self.p,
                "log_se": self.log_se, "degenerate": self.degenerate}


def poisson_rate_ratio(count1, exposure1, count2, exposure2) -> RateRatio:
    """Incidence rate ratio of group 1 over group 2 with a Wald interval on the log scale."""
    if exposure1 <= 0 or exposure2 <= 0:
        raise DataError("exposures must be positive")
    if count1 < 0 or count2 < 0:
        raise DataError("counts must be non-negative")
    rate1, rate2 = count1 / exposure1, count2 / exposure2
    if count1 == 0 or count2 == 0:
        irr = math.inf if count2 == 0 and count1 > 0 else (0.0 if count1 == 0 and count2 > 0 else math.nan)
        return RateRatio(irr, (0.0, math.inf), math.nan, math.inf, True)
    irr = rate1 / rate2
    se = math.sqrt(1.0 / count1 + 1.0 / count2)
    z = math.log(irr) / se
    crit = float(sps.norm.ppf(0.975))
    lo, hi = math.exp(math.log(irr) - crit * se), math.exp(math.log(irr) + crit * se)
    return RateRatio(irr, (lo, hi), float(2.0 * sps.norm.sf(abs(z))), se)
