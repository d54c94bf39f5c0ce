#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
分布与特殊函数模块

提供各采样步骤所需的分位数函数：正态、非中心卡方、Gamma、Poisson、
二项分布、Bessel分布，以及实/复变量的第一类修正Bessel函数。
所有函数都是参数的纯函数，可以在多线程中并发调用。
"""

import logging
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import special, stats

from errors import BesselRangeError, DomainError, NormalizationError, NumericalError

# 配置日志
logger = logging.getLogger('Quantiles')

ArrayLike = Union[float, np.ndarray]

# 连续分布分位数的残差容限
CONTINUOUS_TOL = 1e-10
# 级数截断与归一化容限
SERIES_TOL = 1e-12
# Bessel分布一次处理的行数
BESSEL_CHUNK = 2048


def _probabilities(p: ArrayLike) -> np.ndarray:
    """检查概率参数位于开区间(0,1)内"""
    arr = np.asarray(p, dtype=float)
    inside = (arr > 0.0) & (arr < 1.0)
    if not np.all(inside):
        bad = arr[~inside].ravel()[0]
        raise DomainError(f"概率必须位于(0,1)内，收到 {bad}")
    return arr


def normal_quantile(p: ArrayLike) -> ArrayLike:
    """标准正态分布分位数 Q(p)

    Args:
        p: 概率，标量或数组

    Returns:
        与p形状相同的分位数
    """
    return special.ndtri(_probabilities(p))[()]


@dataclass(frozen=True)
class NoncentralChiSq:
    """非中心卡方分布 χ²_ν(λ)"""
    df: float
    nc: float = 0.0

    def __post_init__(self):
        if not self.df > 0.0:
            raise DomainError(f"自由度必须为正: {self.df}")
        if not self.nc >= 0.0:
            raise DomainError(f"非中心参数不能为负: {self.nc}")

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return ncx2_quantile(self.df, self.nc, p)

    def cdf(self, x: ArrayLike) -> ArrayLike:
        if self.nc == 0.0:
            return stats.chi2.cdf(x, self.df)
        return stats.ncx2.cdf(x, self.df, self.nc)


def noncentral_chisq_quantile(dist: NoncentralChiSq, p: ArrayLike) -> ArrayLike:
    """非中心卡方分布的分位数"""
    return ncx2_quantile(dist.df, dist.nc, p)


def ncx2_quantile(df: ArrayLike, nc: ArrayLike, p: ArrayLike) -> ArrayLike:
    """非中心卡方分位数的向量化版本

    λ=0 的元素走中心卡方分支（正则化不完全Gamma函数的反函数），
    其余交给 scipy.stats.ncx2。

    Args:
        df: 自由度 ν > 0
        nc: 非中心参数 λ ≥ 0
        p: 概率

    Returns:
        分位数，与广播后的输入形状相同
    """
    p = _probabilities(p)
    df, nc, p = np.broadcast_arrays(np.asarray(df, dtype=float), np.asarray(nc, dtype=float), p)
    if np.any(df <= 0.0) or np.any(nc < 0.0):
        raise DomainError("非中心卡方分布要求 df > 0 且 nc ≥ 0")

    out = np.empty(p.shape)
    central = nc == 0.0
    if np.any(central):
        out[central] = 2.0 * special.gammaincinv(0.5 * df[central], p[central])
    shifted = ~central
    if np.any(shifted):
        out[shifted] = stats.ncx2.ppf(p[shifted], df[shifted], nc[shifted])

    if not np.all(np.isfinite(out)):
        idx = int(np.flatnonzero(~np.isfinite(out.ravel()))[0])
        raise NumericalError("非中心卡方分位数计算失败", {
            "df": float(df.ravel()[idx]), "nc": float(nc.ravel()[idx]), "p": float(p.ravel()[idx]),
        })
    return out[()]


def gamma_quantile(shape: ArrayLike, rate: ArrayLike, p: ArrayLike) -> ArrayLike:
    """Gamma(k, β) 分布的分位数，β为速率参数"""
    p = _probabilities(p)
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0.0) or np.any(rate <= 0.0):
        raise DomainError("Gamma分布要求形状参数和速率参数为正")
    return (special.gammaincinv(shape, p) / rate)[()]


def _smallest_covering(k: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray], p: np.ndarray) -> np.ndarray:
    """把候选值修正为满足 CDF(k) ≥ p 的最小整数

    scipy 的离散分位数在边界处可能差一个单位，这里向两侧各扫描几步。
    """
    k = np.maximum(k, 0.0)
    for _ in range(8):
        lower = (k > 0) & (cdf(np.maximum(k - 1.0, 0.0)) >= p)
        if not np.any(lower):
            break
        k = np.where(lower, k - 1.0, k)
    for _ in range(8):
        higher = cdf(k) < p
        if not np.any(higher):
            break
        k = np.where(higher, k + 1.0, k)
    return k


def poisson_quantile(mean: ArrayLike, p: ArrayLike) -> ArrayLike:
    """Poisson(λ) 的广义逆：满足 CDF(n) ≥ p 的最小n

    Args:
        mean: 均值 λ ≥ 0
        p: 概率

    Returns:
        非负整数
    """
    p = _probabilities(p)
    mean, p = np.broadcast_arrays(np.asarray(mean, dtype=float), p)
    if np.any(mean < 0.0):
        raise DomainError("Poisson均值不能为负")

    out = np.zeros(p.shape, dtype=np.int64)
    active = mean > 0.0
    if np.any(active):
        m = mean[active]
        q = p[active]
        k = np.nan_to_num(stats.poisson.ppf(q, m), nan=0.0, posinf=0.0)
        k = _smallest_covering(k, lambda x: special.pdtr(x, m), q)
        out[active] = k.astype(np.int64)
    return out[()]


def binomial_quantile(trials: ArrayLike, prob: ArrayLike, p: ArrayLike) -> ArrayLike:
    """二项分布 Bin(n, θ) 的广义逆"""
    p = _probabilities(p)
    trials, prob, p = np.broadcast_arrays(np.asarray(trials, dtype=np.int64), np.asarray(prob, dtype=float), p)
    if np.any(trials < 0) or np.any((prob < 0.0) | (prob > 1.0)):
        raise DomainError("二项分布要求 n ≥ 0 且 θ ∈ [0,1]")

    out = np.zeros(p.shape, dtype=np.int64)
    certain = (prob == 1.0) & (trials > 0)
    out[certain] = trials[certain]
    active = (trials > 0) & (prob > 0.0) & (prob < 1.0)
    if np.any(active):
        n = trials[active].astype(float)
        theta = prob[active]
        q = p[active]
        k = np.nan_to_num(stats.binom.ppf(q, n, theta), nan=0.0)
        k = np.minimum(k, n)
        k = _smallest_covering(k, lambda x: special.bdtr(np.minimum(x, n), n, theta), q)
        out[active] = np.minimum(k, n).astype(np.int64)
    return out[()]


@dataclass(frozen=True)
class BesselDistribution:
    """Bessel分布：b_n ∝ (z/2)^{2n+ν} / (n! Γ(n+ν+1))"""
    order: float
    argument: float

    def __post_init__(self):
        if not self.order > -1.0:
            raise DomainError(f"Bessel分布阶数必须大于-1: {self.order}")
        if not self.argument >= 0.0:
            raise DomainError(f"Bessel分布参数不能为负: {self.argument}")

    def pmf(self, n_max: int) -> np.ndarray:
        """返回 n = 0..n_max 的概率质量（未重新归一化）"""
        if self.argument == 0.0:
            out = np.zeros(n_max + 1)
            out[0] = 1.0
            return out
        n = np.arange(n_max + 1, dtype=float)
        log_w = _bessel_log_weights(np.array([self.order]), np.array([self.argument]), n)[0]
        log_norm = log_bessel_i_real(self.order, self.argument)
        return np.exp(log_w - log_norm)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return bessel_quantile(self, p)


def _bessel_log_weights(order: np.ndarray, z: np.ndarray, n: np.ndarray) -> np.ndarray:
    nu = order[:, None]
    log_half = np.log(0.5 * z)[:, None]
    return (2.0 * n[None, :] + nu) * log_half - special.gammaln(n[None, :] + 1.0) - special.gammaln(n[None, :] + nu + 1.0)


def _bessel_support_size(order: np.ndarray, z: np.ndarray) -> int:
    mode = 0.5 * (np.sqrt(z * z + order * order) - order)
    return int(np.ceil(np.max(mode + 10.0 * np.sqrt(mode + 1.0)))) + 20


def bessel_quantile(dist: BesselDistribution, p: ArrayLike) -> ArrayLike:
    """Bessel分布的分位数（累积求和反演）"""
    return bessel_quantile_batch(dist.order, dist.argument, p)


def bessel_quantile_batch(order: ArrayLike, z: ArrayLike, p: ArrayLike) -> ArrayLike:
    """Bessel分布分位数的向量化版本

    截断长度按众数自适应选取；若截断后的质量与 I_ν(z) 给出的归一化常数
    相差超过容限，则加倍截断长度重试，最终仍失败时抛出 NormalizationError。

    Args:
        order: 阶数 ν > -1
        z: 参数 z ≥ 0
        p: 概率

    Returns:
        非负整数分位数
    """
    p = _probabilities(p)
    order, z, p = np.broadcast_arrays(np.asarray(order, dtype=float), np.asarray(z, dtype=float), p)
    if np.any(order <= -1.0) or np.any(z < 0.0):
        raise DomainError("Bessel分布要求 ν > -1 且 z ≥ 0")

    shape = p.shape
    order, z, p = order.ravel(), z.ravel(), p.ravel()
    out = np.zeros(p.size, dtype=np.int64)
    active = np.flatnonzero(z > 0.0)
    for start in range(0, active.size, BESSEL_CHUNK):
        rows = active[start:start + BESSEL_CHUNK]
        out[rows] = _bessel_quantile_rows(order[rows], z[rows], p[rows])
    return out.reshape(shape)[()]


def _bessel_quantile_rows(order: np.ndarray, z: np.ndarray, p: np.ndarray) -> np.ndarray:
    log_norm = log_bessel_i_real(order, z)
    # 舍入误差随 log I_ν(z) 的量级增长
    tol = SERIES_TOL * np.maximum(1.0, np.abs(log_norm) / 50.0)
    size = _bessel_support_size(order, z)
    for _ in range(4):
        n = np.arange(size, dtype=float)
        log_w = _bessel_log_weights(order, z, n)
        total = special.logsumexp(log_w, axis=1)
        deficit = np.expm1(total - log_norm)
        if np.all(np.abs(deficit) <= tol):
            break
        logger.debug(f"Bessel分布截断不足，扩展到 {2 * size} 项")
        size *= 2
    else:
        worst = int(np.argmax(np.abs(deficit) / tol))
        raise NormalizationError("Bessel分布概率质量归一化失败", {
            "order": float(order[worst]), "z": float(z[worst]), "deficit": float(deficit[worst]),
        })

    cdf = np.cumsum(np.exp(log_w - total[:, None]), axis=1)
    covered = cdf >= p[:, None]
    idx = np.argmax(covered, axis=1)
    idx[~covered.any(axis=1)] = size - 1
    return idx


def log_bessel_i_real(order: ArrayLike, z: ArrayLike) -> ArrayLike:
    """实参数 z > 0 时的 log I_ν(z)"""
    z = np.asarray(z, dtype=float)
    return (np.log(special.ive(order, z)) + z)[()]


def bessel_i(order: ArrayLike, z: ArrayLike, log_scaled: bool = False) -> ArrayLike:
    """第一类修正Bessel函数 I_ν(z)

    非负实参数返回实数，其余返回复数（主值分支）。

    Args:
        order: 阶数 ν > -1
        z: 实数或复数参数
        log_scaled: 为True时返回 log I_ν(z)，对大 |z| 数值稳定

    Returns:
        I_ν(z) 或 log I_ν(z)
    """
    order = np.asarray(order, dtype=float)
    if np.any(order <= -1.0):
        raise DomainError("Bessel函数阶数必须大于-1")
    z = np.asarray(z)
    if np.iscomplexobj(z) or np.any(z < 0):
        z = z.astype(complex)
    else:
        z = z.astype(float)

    scaled = special.ive(order, z)
    shift = np.abs(z.real)
    if log_scaled:
        with np.errstate(divide='ignore'):
            return (np.log(scaled) + shift)[()]

    with np.errstate(over='ignore', invalid='ignore'):
        value = scaled * np.exp(shift)
    overflow = np.isfinite(scaled) & ~np.isfinite(value)
    if np.any(overflow):
        raise BesselRangeError("I_ν(z) 超出浮点数范围，请使用 log_scaled=True", {
            "max_abs_re_z": float(np.max(shift[overflow])),
        })
    return value[()]


def log_bessel_i_continuous(order: float, z: np.ndarray, log_z: np.ndarray) -> np.ndarray:
    """沿连续分支的 log I_ν(z)

    z 为主值表示，log_z 为沿参数路径连续累积的对数。利用
    I_ν(z e^{2πik}) = e^{2πikν} I_ν(z) 把主值结果搬到正确的叶上。
    """
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.log(special.ive(order, z)) + np.abs(z.real) + order * (log_z - np.log(z))
