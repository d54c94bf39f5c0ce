#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""分位数函数与Bessel函数"""

import numpy as np
import pytest
from scipy import special, stats

from errors import BesselRangeError, DomainError
from quantiles import (BesselDistribution, NoncentralChiSq, bessel_i, bessel_quantile,
                       bessel_quantile_batch, binomial_quantile, gamma_quantile, log_bessel_i_real,
                       ncx2_quantile, noncentral_chisq_quantile, normal_quantile, poisson_quantile)

P_GRID = np.array([1e-6, 0.001, 0.05, 0.25, 0.5, 0.75, 0.95, 0.999, 1 - 1e-6])


def test_normal_quantile():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(stats.norm.cdf(1.3)) == pytest.approx(1.3, rel=1e-12)
    for bad in (0.0, 1.0, -0.1, np.nan):
        with pytest.raises(DomainError):
            normal_quantile(bad)


@pytest.mark.parametrize("df,nc", [(1.268, 0.0), (1.268, 3.5), (4.0, 120.0), (0.3, 0.02)])
def test_ncx2_quantile_inverts_cdf(df, nc):
    dist = NoncentralChiSq(df, nc)
    q = noncentral_chisq_quantile(dist, P_GRID)
    np.testing.assert_allclose(dist.cdf(q), P_GRID, rtol=1e-5, atol=1e-9)
    assert np.all(np.diff(q) > 0)


def test_ncx2_central_branch_matches_chi2():
    np.testing.assert_allclose(ncx2_quantile(2.5, 0.0, P_GRID), stats.chi2.ppf(P_GRID, 2.5), rtol=1e-10)


def test_ncx2_rejects_bad_parameters():
    with pytest.raises(DomainError):
        ncx2_quantile(-1.0, 1.0, 0.5)
    with pytest.raises(DomainError):
        NoncentralChiSq(1.0, -0.5)


def test_gamma_quantile_rate_parametrisation():
    np.testing.assert_allclose(gamma_quantile(2.5, 4.0, P_GRID),
                               stats.gamma.ppf(P_GRID, 2.5, scale=0.25), rtol=1e-10)
    with pytest.raises(DomainError):
        gamma_quantile(0.0, 1.0, 0.5)


@pytest.mark.parametrize("mean", [0.01, 0.7, 5.0, 250.0])
def test_poisson_quantile_is_generalised_inverse(mean):
    p = np.linspace(0.001, 0.999, 200)
    k = poisson_quantile(mean, p)
    assert k.dtype == np.int64
    assert np.all(special.pdtr(k, mean) >= p)
    below = k > 0
    assert np.all(special.pdtr(k[below] - 1, mean) < p[below])


def test_poisson_zero_mean():
    np.testing.assert_array_equal(poisson_quantile(0.0, P_GRID), 0)
    with pytest.raises(DomainError):
        poisson_quantile(-1.0, 0.5)


def test_binomial_quantile_examples():
    assert binomial_quantile(4, 0.5, 0.5) == 2
    assert binomial_quantile(0, 0.3, 0.9) == 0
    assert binomial_quantile(7, 1.0, 0.1) == 7
    theta, n = 0.1, 5
    boundary = (1 - theta) ** n
    assert binomial_quantile(n, theta, boundary * 0.99) == 0
    assert binomial_quantile(n, theta, min(boundary * 1.01, 0.999)) == 1


def test_binomial_quantile_vectorised_against_cdf():
    p = np.linspace(0.01, 0.99, 99)
    trials = np.full(p.size, 12)
    k = binomial_quantile(trials, 0.37, p)
    assert np.all(stats.binom.cdf(k, 12, 0.37) >= p - 1e-12)
    below = k > 0
    assert np.all(stats.binom.cdf(k[below] - 1, 12, 0.37) < p[below])


def test_bessel_pmf_sums_to_one():
    dist = BesselDistribution(order=-0.366, argument=14.0)
    pmf = dist.pmf(200)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(pmf >= 0.0)


@pytest.mark.parametrize("order,z", [(-0.366, 0.4), (-0.366, 14.0), (1.5, 60.0), (0.0, 800.0)])
def test_bessel_quantile_matches_brute_force(order, z):
    dist = BesselDistribution(order=order, argument=z)
    n = np.arange(4000, dtype=float)
    log_w = (2 * n + order) * np.log(z / 2) - special.gammaln(n + 1) - special.gammaln(n + order + 1)
    cdf = np.cumsum(np.exp(log_w - special.logsumexp(log_w)))
    p = np.linspace(0.005, 0.995, 60)
    expected = np.searchsorted(cdf, p)
    np.testing.assert_array_equal(bessel_quantile(dist, p), expected)


def test_bessel_quantile_zero_argument():
    np.testing.assert_array_equal(bessel_quantile_batch(-0.5, 0.0, P_GRID), 0)
    with pytest.raises(DomainError):
        bessel_quantile_batch(-1.5, 1.0, 0.5)


def test_bessel_quantile_batch_mixed_arguments():
    z = np.array([0.0, 0.5, 30.0, 0.0, 400.0])
    p = np.full(z.size, 0.5)
    out = bessel_quantile_batch(0.2, z, p)
    assert out[0] == 0 and out[3] == 0
    assert out[4] > out[2] > 0


def test_bessel_i_real_and_complex():
    assert bessel_i(0.5, 2.0) == pytest.approx(special.iv(0.5, 2.0), rel=1e-12)
    z = 3.0 + 4.0j
    assert bessel_i(0.3, z) == pytest.approx(special.iv(0.3, z), rel=1e-10)
    assert bessel_i(1.2, 50.0, log_scaled=True) == pytest.approx(np.log(special.iv(1.2, 50.0)), rel=1e-12)
    assert log_bessel_i_real(1.2, 900.0) == pytest.approx(np.log(special.ive(1.2, 900.0)) + 900.0)


def test_bessel_i_overflow_requires_log_scaling():
    with pytest.raises(BesselRangeError):
        bessel_i(0.5, 1000.0)
    assert np.isfinite(bessel_i(0.5, 1000.0, log_scaled=True))
