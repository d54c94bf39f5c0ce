#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""SVJ模型：终端模拟、跳跃计数桥与跳跃和桥"""

import math

import numpy as np
import pytest

from errors import ConfigurationError, DomainError
from heston_core import exact_terminal
from bridge_paths import build_path, path_dimension, uniform_grid
from qmc_sampler import generate_net, rqmc_estimate
from svj_model import (JumpPath, SvjParams, bridge_jump_path, build_svj_path, jump_sum_quantile, jumpsum_bridge,
                       poisson_bridge_count, sequential_jump_path, svj_dimension, svj_terminal)


@pytest.fixture
def busy_jumps(heston_params):
    """跳跃频繁的参数，便于检验跳跃部分的分布"""
    return SvjParams.from_log_moments(heston_params, jump_intensity=3.0, log_jump_mean=-0.1391, jump_vol=0.15)


def test_log_jump_mean_identity(heston_params):
    params = SvjParams(heston_params, 0.11, -0.12, 0.15)
    assert params.log_jump_mean == pytest.approx(math.log(0.88) - 0.5 * 0.15 ** 2, rel=1e-14)
    back = SvjParams.from_log_moments(heston_params, 0.11, params.log_jump_mean, 0.15)
    assert back.mean_jump == pytest.approx(-0.12, rel=1e-12)
    assert params.compensated_rate == pytest.approx(0.0319 + 0.11 * 0.12)


def test_params_from_dict(svj_params):
    raw = {"S0": 100.0, "V0": 0.010201, "kappa": 6.21, "theta": 0.019, "sigma": 0.61, "rho": -0.70,
           "r": 0.0319, "lambda": 0.11, "mu_s": -0.1391, "sigma_s": 0.15}
    assert SvjParams.from_dict(raw) == svj_params
    direct = SvjParams.from_dict({**raw, "mu_bar": -0.1})
    assert direct.mean_jump == -0.1
    with pytest.raises(DomainError):
        SvjParams(svj_params.heston, -1.0, 0.0, 0.1)
    with pytest.raises(DomainError):
        SvjParams(svj_params.heston, 1.0, -1.5, 0.1)


def test_dimensions():
    assert svj_dimension(1, "naive") == 5
    assert svj_dimension(4, "naive") == 20
    assert svj_dimension(4, "bridge") == 26


def test_zero_intensity_terminal_is_heston(heston_params, uniforms):
    params = SvjParams(heston_params, 0.0, 0.2, 0.3)
    u = uniforms(32, 5, seed=1)
    svj = svj_terminal(params, 1.0, u)
    heston = exact_terminal(heston_params, 1.0, u[:, :3])
    np.testing.assert_array_equal(svj.s, heston.s)
    np.testing.assert_array_equal(svj.count, 0)


@pytest.mark.parametrize("scheme", ["naive", "bridge"])
def test_zero_intensity_path_is_heston(heston_params, uniforms, scheme):
    params = SvjParams(heston_params, 0.0, 0.2, 0.3)
    times = uniform_grid(4, 1.0)
    u = uniforms(16, svj_dimension(4, scheme), seed=2)
    grid, jumps = build_svj_path(params, times, scheme, u)
    diffusion_u = np.concatenate((u[:, :12], u[:, 20:]), axis=1)
    assert diffusion_u.shape[1] == path_dimension(4, scheme)
    heston = build_path(heston_params, times, scheme, diffusion_u)
    np.testing.assert_array_equal(grid.s, heston.s)
    np.testing.assert_array_equal(jumps.sums, 0.0)


def test_deterministic_jump_sizes(heston_params):
    params = SvjParams(heston_params, 1.0, 0.05, 0.0)
    values = jump_sum_quantile(params, np.array([0, 1, 3]), np.array([0.1, 0.5, 0.9]))
    np.testing.assert_allclose(values, np.array([0, 1, 3]) * math.log(1.05))


def test_poisson_bridge_count_examples():
    assert poisson_bridge_count(0, 4, 0.0, 0.5, 1.0, 0.5) == 2
    np.testing.assert_array_equal(poisson_bridge_count([3, 3], [3, 3], 0.0, 0.3, 1.0, [0.1, 0.9]), [3, 3])
    # 中间时刻靠近左端时，p < (1-θ)^k 的分位数为 N_s
    theta = 0.01
    assert poisson_bridge_count(2, 7, 0.0, theta, 1.0, 0.99 * (1 - theta) ** 5) == 2
    with pytest.raises(DomainError):
        poisson_bridge_count(5, 4, 0.0, 0.5, 1.0, 0.5)
    with pytest.raises(DomainError):
        poisson_bridge_count(0, 4, 0.0, 1.0, 1.0, 0.5)


def test_jumpsum_bridge_examples(svj_params):
    sigma2 = svj_params.jump_vol ** 2
    mid = jumpsum_bridge(svj_params, 0.0, -0.3, (0, 1, 2), 0.5)
    assert mid == pytest.approx(-0.15)
    above = jumpsum_bridge(svj_params, 0.0, -0.3, (0, 1, 2), 0.8413447460685429)
    assert above - mid == pytest.approx(math.sqrt(sigma2 / 2.0), rel=1e-9)
    assert jumpsum_bridge(svj_params, -0.2, -0.2, (2, 2, 2), 0.9) == pytest.approx(-0.2)
    with pytest.raises(DomainError):
        jumpsum_bridge(svj_params, 0.0, 0.0, (2, 1, 3), 0.5)


def test_jumpsum_bridge_reproduces_joint_law(busy_jumps):
    rng = np.random.default_rng(3)
    n, mu, sd = 20000, busy_jumps.log_jump_mean, busy_jumps.jump_vol
    j_left = rng.normal(mu, sd, n)
    j_right = j_left + rng.normal(4 * mu, 2 * sd, n)
    counts = (np.full(n, 1), np.full(n, 3), np.full(n, 5))
    j_mid = jumpsum_bridge(busy_jumps, j_left, j_right, counts, rng.random(n))
    assert j_mid.mean() == pytest.approx(3 * mu, abs=4 * math.sqrt(3) * sd / math.sqrt(n))
    assert j_mid.var() == pytest.approx(3 * sd ** 2, rel=0.05)
    assert (j_mid - j_left).var() == pytest.approx(2 * sd ** 2, rel=0.05)
    assert (j_right - j_mid).var() == pytest.approx(2 * sd ** 2, rel=0.05)


def test_count_bridge_matches_sequential(busy_jumps, uniforms):
    times = uniform_grid(4, 1.0)
    u = uniforms(20000, 8, seed=4)
    bridged = bridge_jump_path(busy_jumps, times, u[:, :4], u[:, 4:])
    w = uniforms(20000, 8, seed=5)
    sequential = sequential_jump_path(busy_jumps, times, w[:, :4], w[:, 4:])
    for path in (bridged, sequential):
        assert np.all(np.diff(path.counts, axis=1) >= 0)
        counts, _ = path.increments()
        for i in range(4):
            se = math.sqrt(0.75 / 20000)
            assert counts[:, i].mean() == pytest.approx(0.75, abs=5 * se)
            assert counts[:, i].var() == pytest.approx(0.75, rel=0.06)
        # 不同区间的计数增量不相关
        assert abs(np.corrcoef(counts[:, 0], counts[:, 1])[0, 1]) < 0.04
    np.testing.assert_allclose(np.bincount(bridged.counts[:, 1], minlength=8)[:8] / 20000,
                               np.bincount(sequential.counts[:, 1], minlength=8)[:8] / 20000, atol=0.02)


def test_equal_counts_keep_jump_sum(busy_jumps, uniforms):
    u = uniforms(500, 16, seed=6)
    path = bridge_jump_path(busy_jumps, uniform_grid(8, 1.0), u[:, :8], u[:, 8:])
    counts, sums = path.increments()
    np.testing.assert_allclose(sums[counts == 0], 0.0, atol=1e-12)


def test_jump_sum_tower_variance(busy_jumps, uniforms):
    u = uniforms(40000, 2, seed=7)
    path = sequential_jump_path(busy_jumps, np.array([1.0]), u[:, :1], u[:, 1:])
    mu, sd = busy_jumps.log_jump_mean, busy_jumps.jump_vol
    assert path.sums[:, 0].var() == pytest.approx(3.0 * (sd ** 2 + mu ** 2), rel=0.08)


def test_jump_path_increments():
    path = JumpPath(counts=np.array([[1, 1, 3]]), sums=np.array([[0.1, 0.1, -0.2]]))
    counts, sums = path.increments()
    np.testing.assert_array_equal(counts, [[1, 0, 2]])
    np.testing.assert_allclose(sums, [[0.1, 0.0, -0.3]])


def test_short_rows_rejected(svj_params, uniforms):
    with pytest.raises(ConfigurationError):
        svj_terminal(svj_params, 1.0, uniforms(4, 3))
    with pytest.raises(ConfigurationError):
        build_svj_path(svj_params, uniform_grid(2, 1.0), "bridge", uniforms(4, 10))


def test_svj_terminal_martingale(svj_params):
    discount = math.exp(-svj_params.heston.r)
    report = rqmc_estimate(lambda u: discount * svj_terminal(svj_params, 1.0, u).s,
                           generate_net(5, 9), q=8, seed=8)
    assert report.estimate == pytest.approx(100.0, abs=4 * report.std_error + 1e-2)


def test_compensated_path_martingale(busy_jumps, uniforms):
    times = uniform_grid(2, 1.0)
    grid, _ = build_svj_path(busy_jumps, times, "bridge", uniforms(3000, svj_dimension(2, "bridge"), seed=9))
    discounted = math.exp(-busy_jumps.heston.r) * grid.s[:, -1]
    se = discounted.std(ddof=1) / math.sqrt(discounted.size)
    assert discounted.mean() == pytest.approx(100.0, abs=4 * se)
