import math

import numpy as np
import pytest

from transona.errors import DataError
from transona.stats import (EXACT, NORMAL_APPROX, bootstrap_aic_compare, logistic_aic, poisson_rate_ratio,
                            replicate_rng, welch_t, wilcoxon_rank_sum, wilcoxon_signed_rank)

from oracles import logistic_gradient_ascent, rank_sum_null, signed_rank_null, two_sided_p


def test_rank_sum_examples():
    r = wilcoxon_rank_sum([1, 2, 3], [4, 5, 6])
    assert r.statistic == 0 and r.method == EXACT and r.p == pytest.approx(0.1, abs=1e-12)
    r = wilcoxon_rank_sum([1, 3], [2, 4])
    assert r.statistic == 1 and r.p == pytest.approx(2 / 3, abs=1e-12)
    r = wilcoxon_rank_sum([5], [5])
    assert r.statistic == 0.5 and r.p == 1.0
    with pytest.raises(DataError):
        wilcoxon_rank_sum([], [1])


def test_signed_rank_examples():
    r = wilcoxon_signed_rank([1, 2, 3])
    assert r.statistic == 6 and r.p == pytest.approx(0.25, abs=1e-12)
    r = wilcoxon_signed_rank([-1, -2, -3])
    assert r.statistic == 0 and r.p == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(DataError, match="zero"):
        wilcoxon_signed_rank([0, 0])
    assert wilcoxon_signed_rank([3, 5], [1, 2]).statistic == 3


def test_rank_sum_exact_matches_enumeration_sample():
    rng = np.random.default_rng(0)
    for n1 in range(1, 9):
        for n2 in range(1, 9):
            null = rank_sum_null(n1, n2)
            perm = rng.permutation(n1 + n2).astype(float)
            r = wilcoxon_rank_sum(perm[:n1], perm[n1:])
            assert r.method == EXACT
            assert r.p == pytest.approx(two_sided_p(null, r.statistic), abs=1e-12)


def test_signed_rank_exact_matches_enumeration_sample():
    rng = np.random.default_rng(1)
    for n in range(1, 13):
        null = signed_rank_null(n)
        for _ in range(3):
            d = (np.arange(1, n + 1) * rng.choice([-1, 1], n)).astype(float)
            r = wilcoxon_signed_rank(d)
            assert r.p == pytest.approx(two_sided_p(null, r.statistic), abs=1e-12)


def test_rank_sum_symmetry_and_shift_invariance():
    rng = np.random.default_rng(2)
    for _ in range(50):
        x, y = rng.normal(size=int(rng.integers(1, 15))), rng.normal(size=int(rng.integers(1, 15)))
        a, b = wilcoxon_rank_sum(x, y), wilcoxon_rank_sum(y, x)
        assert a.statistic + b.statistic == len(x) * len(y)
        assert a.p == pytest.approx(b.p, abs=1e-12)
        s = wilcoxon_rank_sum(x + 3.5, y + 3.5)
        assert (s.statistic, s.p, s.r) == (a.statistic, a.p, a.r)
        assert 0 <= a.p <= 1 and 0 <= a.r <= 1


def test_normal_approximation_beyond_limit_and_with_ties():
    assert wilcoxon_rank_sum(np.arange(9.0), np.arange(9.0) + 20).method == NORMAL_APPROX
    assert wilcoxon_rank_sum([1, 1, 2], [3, 4]).method == NORMAL_APPROX
    assert wilcoxon_signed_rank(np.arange(1.0, 14)).method == NORMAL_APPROX


def test_intercept_only_aic():
    fit = logistic_aic(np.zeros((4, 0)), [1, 1, 0, 0])
    assert fit.converged and abs(fit.coefficients[0]) < 1e-12
    assert fit.aic == pytest.approx(2 + 8 * math.log(2), abs=1e-9)


def test_separation_flagged():
    fit = logistic_aic(np.array([1.0, 2, 3, 4, 5, 6]), [0, 0, 0, 1, 1, 1])
    assert not fit.converged and fit.separated
    with pytest.raises(DataError):
        logistic_aic(np.arange(4.0), [1, 1, 1, 1])


def test_irls_matches_gradient_ascent():
    rng = np.random.default_rng(3)
    for _ in range(10):
        X = rng.normal(size=(40, 2))
        y = (rng.random(40) < 1 / (1 + np.exp(-(X @ [0.8, -0.5])))).astype(float)
        fit = logistic_aic(X, y)
        assert fit.converged
        assert np.max(np.abs(fit.coefficients - logistic_gradient_ascent(X, y))) < 1e-4
        assert fit.aic == pytest.approx(2 * fit.k - 2 * fit.loglik, abs=1e-9)


def test_nested_aic_identity():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 2))
    y = (rng.random(50) < 0.5).astype(float)
    big, small = logistic_aic(X, y), logistic_aic(X[:, :1], y)
    assert small.aic - big.aic == pytest.approx(2 * (big.loglik - small.loglik) - 2 * (big.k - small.k), abs=1e-9)


def test_bootstrap_equal_scores():
    rng = np.random.default_rng(5)
    s = rng.normal(size=(40, 2))
    y = (rng.random(40) < 0.5).astype(float)
    res = bootstrap_aic_compare(s, s, y, replicates=200, seed=1)
    assert res.ci95[0] <= 0 <= res.ci95[1] and abs(res.t) < 2
    assert len(res.aic_a) == len(res.aic_b) == 200


def test_bootstrap_informative_model_preferred():
    rng = np.random.default_rng(6)
    y = (np.arange(60) % 2).astype(float)
    a = np.column_stack([y + rng.normal(0, 0.8, 60), rng.normal(size=60)])
    b = rng.normal(size=(60, 2))
    res = bootstrap_aic_compare(a, b, y, replicates=200, seed=2)
    assert res.p < 0.05 and res.preferred == "A"


def test_bootstrap_determinism_and_errors():
    rng = np.random.default_rng(7)
    s, y = rng.normal(size=(20, 2)), (np.arange(20) % 2).astype(float)
    r1 = bootstrap_aic_compare(s, s[::-1], y, replicates=30, seed=9)
    r2 = bootstrap_aic_compare(s, s[::-1], y, replicates=30, seed=9)
    assert r1.to_dict(include_samples=True) == r2.to_dict(include_samples=True)
    with pytest.raises(DataError):
        bootstrap_aic_compare(s[:5], s[:5], y[:5], seed=1)
    with pytest.raises(DataError):
        bootstrap_aic_compare(s, s, y)


def test_replicate_rng_is_counter_keyed():
    a = replicate_rng(5, 3).integers(0, 1000, 10)
    replicate_rng(5, 0).integers(0, 1000, 10)
    assert np.array_equal(a, replicate_rng(5, 3).integers(0, 1000, 10))
    assert not np.array_equal(a, replicate_rng(5, 4).integers(0, 1000, 10))


def test_welch_matches_scipy():
    from scipy import stats as sps
    rng = np.random.default_rng(8)
    a, b = rng.normal(0, 1, 30), rng.normal(0.5, 2, 40)
    t, df, p, _, _ = welch_t(a, b)
    ref = sps.ttest_ind(a, b, equal_var=False)
    assert t == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue)


def test_rate_ratio():
    rr = poisson_rate_ratio(27, 66, 80, 335)
    assert rr.irr == pytest.approx(1.71, abs=0.01)
    assert rr.ci95[0] == pytest.approx(1.11, abs=0.01)
    assert poisson_rate_ratio(10, 100, 20, 200).irr == 1.0
    z = poisson_rate_ratio(0, 10, 5, 10)
    assert z.degenerate and z.ci95[1] == math.inf
    with pytest.raises(DataError):
        poisson_rate_ratio(1, 0, 1, 1)
