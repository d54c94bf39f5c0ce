#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Heston精确模拟的分位数步骤与条件定价"""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from errors import DomainError
from heston_core import (ConditionedLogPriceLaw, HestonParams, IntegratedVarianceLaw, black_scholes_call,
                         black_scholes_put, conditional_european_call, conditional_european_put,
                         conditioning_draws, exact_terminal, iv_cdf, iv_char_fn, iv_moments, iv_quantile,
                         recover_stoch_integral, richardson_cumulants, sample_integrated_variance,
                         terminal_logprice_quantile, variance_transition_quantile)
from qmc_sampler import generate_net, mc_estimate, rqmc_estimate, rqmc_estimate_multi

TRUE_CALL = 6.80611


@pytest.fixture
def law(heston_params):
    return IntegratedVarianceLaw(heston_params, 1.0, heston_params.v0, heston_params.v0)


def test_params_validation():
    HestonParams(s0=100.0, v0=0.0, kappa=1.0, theta=0.04, sigma=2.0, rho=0.0, r=0.0)
    with pytest.raises(DomainError):
        HestonParams(s0=100.0, v0=0.04, kappa=1.0, theta=0.04, sigma=0.3, rho=1.0, r=0.0)
    with pytest.raises(DomainError):
        HestonParams(s0=100.0, v0=-0.01, kappa=1.0, theta=0.04, sigma=0.3, rho=0.0, r=0.0)
    with pytest.raises(KeyError):
        HestonParams.from_dict({"S0": 100.0})


def test_derived_quantities(heston_params):
    assert heston_params.dimension == pytest.approx(4 * 6.21 * 0.019 / 0.61 ** 2)
    assert heston_params.bessel_order == pytest.approx(heston_params.dimension / 2 - 1)
    assert not heston_params.feller
    assert HestonParams.from_dict({"S0": 100, "V0": 0.010201, "Kappa": 6.21, "theta": 0.019,
                                   "sigma": 0.61, "rho": -0.7, "r": 0.0319}) == heston_params


def test_variance_transition_from_zero_is_scaled_chi2(heston_params):
    p = np.array([0.05, 0.5, 0.95])
    kappa, sigma = heston_params.kappa, heston_params.sigma
    scale = sigma ** 2 * (1 - math.exp(-kappa)) / (4 * kappa)
    expected = scale * stats.chi2.ppf(p, heston_params.dimension)
    np.testing.assert_allclose(variance_transition_quantile(heston_params, 0.0, 1.0, p), expected, rtol=1e-9)


def test_variance_transition_matches_sampled_law(heston_params, uniforms):
    kappa, sigma = heston_params.kappa, heston_params.sigma
    scale = sigma ** 2 * (1 - math.exp(-kappa)) / (4 * kappa)
    nc = heston_params.v0 * math.exp(-kappa) / scale
    draws = variance_transition_quantile(heston_params, heston_params.v0, 1.0, uniforms(20000, 1, seed=4)[:, 0])
    oracle = scale * stats.ncx2.rvs(heston_params.dimension, nc, size=20000, random_state=5)
    assert stats.ks_2samp(draws, oracle).pvalue > 0.001
    with pytest.raises(DomainError):
        variance_transition_quantile(heston_params, heston_params.v0, 0.0, 0.5)


def test_char_fn_normalisation(law):
    assert iv_char_fn(law, 0.0) == 1.0 + 0.0j
    a = np.linspace(-400.0, 400.0, 41)
    assert np.all(np.abs(iv_char_fn(law, a)) <= 1.0 + 1e-12)


def test_char_fn_symmetric_in_endpoints(heston_params):
    forward = IntegratedVarianceLaw(heston_params, 0.5, 0.02, 0.005)
    backward = IntegratedVarianceLaw(heston_params, 0.5, 0.005, 0.02)
    a = np.array([1.0, 10.0, 100.0])
    np.testing.assert_allclose(forward.char_fn(a), backward.char_fn(a), rtol=1e-10)
    assert iv_moments(forward)[0] == pytest.approx(iv_moments(backward)[0], rel=1e-10)


def test_richardson_cumulants_fourth_order():
    shape, scale = 3.0, 0.5

    def log_cf(a):
        return -shape * np.log(1.0 - 1j * a * scale)

    errors = []
    for step in (0.2, 0.1):
        k1, k2 = richardson_cumulants(log_cf, step)
        errors.append((abs(k1 - shape * scale), abs(k2 - shape * scale ** 2)))
    for coarse, fine in zip(*errors):
        assert 12.0 < coarse / fine < 20.0


def test_moments_are_consistent(law):
    m1, m2 = iv_moments(law)
    assert m1 > 0.0 and m2 > m1 ** 2
    # 端点均为 V₀ 时条件均值接近 V₀Δt 与 θΔt 之间
    assert 0.005 < m1 < 0.03


def test_cdf_basic_properties(law):
    assert iv_cdf(law, 0.0) == 0.0
    m1 = float(law.m1[0])
    grid = np.array([0.25, 0.5, 1.0, 2.0]) * m1
    values = iv_cdf(law, grid)
    assert np.all(np.diff(values) >= -2 * law.epsilon)
    assert iv_cdf(law, 10 * float(law.x_max[0])) == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(DomainError):
        iv_cdf(law, -1.0)


def test_quantile_inverts_cdf(law):
    p = np.linspace(0.01, 0.99, 25)
    x = iv_quantile(law, p)
    assert np.all(x >= 0.0)
    assert np.all(np.diff(x) > 0.0)
    np.testing.assert_allclose(iv_cdf(law, x), p, atol=2e-7)
    with pytest.raises(DomainError):
        iv_quantile(law, 0.0)


def test_quantile_vectorised_over_endpoints(heston_params):
    v_end = np.array([0.001, 0.01, 0.05, 0.2])
    batch = IntegratedVarianceLaw(heston_params, 0.25, heston_params.v0, v_end)
    medians = batch.quantile(np.full(4, 0.5))
    for i, y in enumerate(v_end):
        single = IntegratedVarianceLaw(heston_params, 0.25, heston_params.v0, y)
        assert medians[i] == pytest.approx(single.quantile(0.5), rel=1e-6)
    # 终点方差越大，积分越大
    assert np.all(np.diff(medians) > 0.0)


def test_short_interval_integral_vanishes(heston_params):
    dt = 1e-4
    value = IntegratedVarianceLaw(heston_params, dt, heston_params.v0, heston_params.v0).quantile(0.5)
    assert value == pytest.approx(heston_params.v0 * dt, rel=0.1)


def test_invalid_law_arguments(heston_params):
    with pytest.raises(DomainError):
        IntegratedVarianceLaw(heston_params, 0.0, 0.01, 0.01)
    with pytest.raises(DomainError):
        IntegratedVarianceLaw(heston_params, 1.0, -0.01, 0.01)


def test_zero_endpoint_is_supported(heston_params):
    law = IntegratedVarianceLaw(heston_params, 1.0, 0.0, 0.02)
    x = law.quantile(np.array([0.1, 0.5, 0.9]))
    assert np.all(np.diff(x) > 0.0)


def test_recover_stoch_integral_identity(heston_params):
    theta = heston_params.theta
    assert recover_stoch_integral(heston_params, 0.02, 0.02, theta, 1.0) == pytest.approx(0.0, abs=1e-15)
    base = recover_stoch_integral(heston_params, 0.01, 0.02, 0.015, 1.0)
    assert recover_stoch_integral(heston_params, 0.01, 0.03, 0.015, 1.0) - base == pytest.approx(0.01 / 0.61)
    assert recover_stoch_integral(heston_params, 0.01, 0.02, 0.025, 1.0) - base == pytest.approx(6.21 * 0.01 / 0.61)


def test_recover_stoch_integral_matches_euler_path():
    params = HestonParams(s0=100.0, v0=0.04, kappa=2.0, theta=0.04, sigma=0.2, rho=0.0, r=0.0)
    rng = np.random.default_rng(8)
    steps, dt = 2000, 1.0 / 2000
    v = np.full(50, params.v0)
    iv = np.zeros(50)
    direct = np.zeros(50)
    for _ in range(steps):
        dw = rng.standard_normal(50) * math.sqrt(dt)
        root = np.sqrt(np.maximum(v, 0.0))
        iv += v * dt
        direct += root * dw
        v = v + params.kappa * (params.theta - v) * dt + params.sigma * root * dw
    np.testing.assert_allclose(recover_stoch_integral(params, params.v0, v, iv, 1.0), direct, rtol=1e-8, atol=1e-12)


def test_terminal_logprice_quantile():
    law = ConditionedLogPriceLaw(s_start=100.0, drift=0.01, variance=0.04)
    assert terminal_logprice_quantile(law, 0.5) == pytest.approx(100.0 * math.exp(0.01))
    p = np.array([0.1, 0.5, 0.9])
    assert np.all(np.diff(terminal_logprice_quantile(law, p)) > 0.0)
    point = ConditionedLogPriceLaw(s_start=100.0, drift=0.01, variance=0.0)
    np.testing.assert_allclose(terminal_logprice_quantile(point, p), 100.0 * math.exp(0.01))
    expected = stats.lognorm.ppf(0.9, 0.2, scale=100.0 * math.exp(0.01))
    assert terminal_logprice_quantile(law, 0.9) == pytest.approx(expected, rel=1e-10)


def test_conditioned_law_drift(heston_params):
    law = ConditionedLogPriceLaw.from_increments(heston_params, 100.0, 0.02, 0.1, 1.0)
    assert law.drift == pytest.approx(0.0319 - 0.01 - 0.07)
    assert law.variance == pytest.approx(0.51 * 0.02)
    with pytest.raises(DomainError):
        ConditionedLogPriceLaw.from_increments(heston_params, 100.0, -0.01, 0.0, 1.0)


def test_black_scholes_against_quadrature():
    s, k, r, tau, vol = 100.0, 100.0, 0.0319, 1.0, 0.1

    def integrand(x):
        st = s * math.exp((r - 0.5 * vol ** 2) * tau + vol * math.sqrt(tau) * x)
        return math.exp(-r * tau) * max(st - k, 0.0) * stats.norm.pdf(x)

    oracle, _ = integrate.quad(integrand, -10.0, 10.0, points=[0.0], limit=200)
    assert black_scholes_call(s, k, r, tau, vol) == pytest.approx(oracle, rel=1e-8)


def test_black_scholes_limits():
    assert black_scholes_call(100.0, 100.0, 0.0, 1.0, 0.0) == 0.0
    assert black_scholes_call(100.0, 90.0, 0.05, 1.0, 0.0) == pytest.approx(100.0 - 90.0 * math.exp(-0.05))
    assert black_scholes_call(1e6, 100.0, 0.05, 1.0, 0.2) == pytest.approx(1e6 - 100.0 * math.exp(-0.05))
    call = black_scholes_call(105.0, 100.0, 0.03, 0.5, 0.25)
    put = black_scholes_put(105.0, 100.0, 0.03, 0.5, 0.25)
    assert call - put == pytest.approx(105.0 - 100.0 * math.exp(-0.015))
    with pytest.raises(DomainError):
        black_scholes_call(100.0, 100.0, 0.0, 1.0, -0.1)


def test_expected_integrated_variance(heston_params):
    p = heston_params
    expected = p.theta + (p.v0 - p.theta) * (1.0 - math.exp(-p.kappa)) / p.kappa
    report = rqmc_estimate(lambda u: conditioning_draws(p, 1.0, u)[1], generate_net(2, 9), q=8, seed=1)
    assert report.estimate == pytest.approx(expected, abs=5 * report.std_error + 5e-5)


def test_integrated_variance_is_additive(heston_params, uniforms):
    p = heston_params
    u = uniforms(2000, 4, seed=2)
    v_half = variance_transition_quantile(p, p.v0, 0.5, u[:, 0])
    first = sample_integrated_variance(p, 0.5, p.v0, v_half, u[:, 1])
    v_end = variance_transition_quantile(p, v_half, 0.5, u[:, 2])
    second = sample_integrated_variance(p, 0.5, v_half, v_end, u[:, 3])

    w = uniforms(2000, 2, seed=3)
    v_one = variance_transition_quantile(p, p.v0, 1.0, w[:, 0])
    one_shot = sample_integrated_variance(p, 1.0, p.v0, v_one, w[:, 1])
    assert stats.ks_2samp(first + second, one_shot).pvalue > 0.001


def test_sample_integrated_variance_chunks_agree(heston_params, uniforms):
    p = heston_params
    u = uniforms(40, 2, seed=6)
    v_end = variance_transition_quantile(p, p.v0, 1.0, u[:, 0])
    whole = sample_integrated_variance(p, 1.0, p.v0, v_end, u[:, 1])
    pieces = sample_integrated_variance(p, 1.0, p.v0, v_end, u[:, 1], chunk=7)
    np.testing.assert_allclose(whole, pieces, rtol=1e-9)


def test_conditional_call_price(heston_params):
    report = rqmc_estimate(lambda u: conditional_european_call(heston_params, 100.0, 1.0, u),
                           generate_net(2, 10), q=10, seed=3)
    assert report.estimate == pytest.approx(TRUE_CALL, abs=4 * report.std_error + 2e-3)
    assert report.std_error < 0.01


def test_plain_qmc_call_and_martingale(heston_params):
    p = heston_params
    discount = math.exp(-p.r)

    def f(u):
        s = exact_terminal(p, 1.0, u).s
        return np.column_stack((discount * np.maximum(s - 100.0, 0.0), discount * s))

    reports = rqmc_estimate_multi(f, generate_net(3, 10), ["call", "spot"], q=8, seed=4)
    assert reports["call"].estimate == pytest.approx(TRUE_CALL, abs=4 * reports["call"].std_error + 1e-2)
    assert reports["spot"].estimate == pytest.approx(100.0, abs=4 * reports["spot"].std_error + 1e-2)


def test_conditional_put_call_parity(heston_params):
    p = heston_params

    def f(u):
        return conditional_european_call(p, 100.0, 1.0, u) - conditional_european_put(p, 100.0, 1.0, u)

    report = rqmc_estimate(f, generate_net(2, 9), q=8, seed=5)
    assert report.estimate == pytest.approx(100.0 - 100.0 * math.exp(-p.r), abs=4 * report.std_error + 1e-2)


def test_zero_correlation_uses_unadjusted_spot(heston_params, uniforms):
    p = replace(heston_params, rho=0.0)
    u = uniforms(16, 2, seed=9)
    _, iv, _ = conditioning_draws(p, 1.0, u)
    expected = black_scholes_call(p.s0, 100.0, p.r, 1.0, np.sqrt(iv))
    np.testing.assert_allclose(conditional_european_call(p, 100.0, 1.0, u), expected, rtol=1e-12)


SWEEP_SIZES = [2 ** m for m in range(7, 15)]


def std_error_sweep(params, q=10, seed=2024):
    """每个样本规模下 cond-qmc / qmc / mc 三种方案的标准误差"""
    discount = math.exp(-params.r)

    def plain(u):
        return discount * np.maximum(exact_terminal(params, 1.0, u).s - 100.0, 0.0)

    def smooth(u):
        return conditional_european_call(params, 100.0, 1.0, u)

    rows = []
    for n in SWEEP_SIZES:
        m = n.bit_length() - 1
        rows.append((rqmc_estimate(smooth, generate_net(2, m), q=q, seed=seed).std_error,
                     rqmc_estimate(plain, generate_net(3, m), q=q, seed=seed).std_error,
                     mc_estimate(plain, 3, n, q=q, seed=seed).std_error))
    return np.array(rows)


@pytest.fixture(scope="module")
def sweep_errors():
    params = HestonParams(s0=100.0, v0=0.010201, kappa=6.21, theta=0.019, sigma=0.61, rho=-0.70, r=0.0319)
    return std_error_sweep(params)


@pytest.mark.slow
def test_conditional_qmc_error_decay(sweep_errors):
    slope = np.polyfit(np.log(SWEEP_SIZES), np.log(sweep_errors[:, 0]), 1)[0]
    assert slope <= -0.75


@pytest.mark.slow
def test_std_error_ordering_across_sizes(sweep_errors):
    ordered = (sweep_errors[:, 0] <= sweep_errors[:, 1]) & (sweep_errors[:, 1] <= sweep_errors[:, 2])
    assert ordered.sum() >= 7
