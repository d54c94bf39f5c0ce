#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试公共配置：把 src/ 加入模块搜索路径，并提供第一组实验参数等夹具
"""

import os
import sys

import numpy as np
import pytest

ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT_DIR, "src"))

from heston_core import HestonParams  # noqa: E402
from svj_model import SvjParams  # noqa: E402


@pytest.fixture
def root_dir():
    return ROOT_DIR


@pytest.fixture
def heston_params():
    """S=K=100, V₀=0.010201, κ=6.21, θ=0.019, σ=0.61, ρ=-0.70, r=3.19%，δ≈1.268 不满足Feller条件"""
    return HestonParams(s0=100.0, v0=0.010201, kappa=6.21, theta=0.019, sigma=0.61, rho=-0.70, r=0.0319)


@pytest.fixture
def svj_params(heston_params):
    return SvjParams.from_log_moments(heston_params, jump_intensity=0.11, log_jump_mean=-0.1391, jump_vol=0.15)


@pytest.fixture
def uniforms():
    """返回 f(n, d, seed)，生成位于开区间(0,1)内的独立均匀点"""
    def make(n, d, seed=0):
        rng = np.random.default_rng(seed)
        return np.clip(rng.random((n, d)), 1e-12, 1.0 - 1e-12)
    return make
