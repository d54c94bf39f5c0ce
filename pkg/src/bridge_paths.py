#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多日期路径生成模块

在 h 个监测日期上生成 (V, ∫V ds, ∫√V dW², S) 路径：
  - naive：按时间顺序逐段精确模拟
  - bridge：先模拟终点，再按二分层次模拟中点，使低维QMC坐标驱动方差最大的变量

方差过程的桥接利用时间变换 V_t = e^{-κt} X_{c(t)}，c(t) = σ²/(4κ)(e^{κt} - 1)，
其中 X 为维数 δ = 4κθ/σ² 的平方Bessel过程，其桥可以分解为 Poisson-Bessel-Gamma 复合抽样。

坐标布局（每行一个点）：
  naive : [V_1..V_h | IV_1..IV_h | Z_1..Z_h]                        共 3h 维
  bridge: [V 桥接顺序 | IV 时间顺序 | Z 桥接顺序 | 每个内部点的 (Poisson, Bessel)]  共 3h + 2(h-1) 维
"""

import math
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from errors import ConfigurationError, DomainError
from heston_core import (HestonParams, recover_stoch_integral, sample_integrated_variance,
                         variance_transition_quantile)
from quantiles import bessel_quantile_batch, gamma_quantile, normal_quantile, poisson_quantile

# 配置日志
logger = logging.getLogger('BridgePaths')

SCHEMES = ("naive", "bridge")


def is_power_of_two(h: int) -> bool:
    return h >= 1 and (h & (h - 1)) == 0


def uniform_grid(h: int, expiry: float) -> np.ndarray:
    """[0, T] 上的等距监测日期 t_1..t_h"""
    if h < 1:
        raise ConfigurationError(f"监测日期数必须为正: {h}", "dates")
    return expiry * np.arange(1, h + 1) / h


def check_grid(times, scheme: str) -> np.ndarray:
    """检查监测日期严格递增且为正，bridge方案要求日期数为2的幂"""
    times = np.asarray(times, dtype=float).ravel()
    if scheme not in SCHEMES:
        raise ConfigurationError(f"未知的路径方案: {scheme}", "scheme")
    if times.size == 0 or times[0] <= 0.0 or np.any(np.diff(times) <= 0.0):
        raise ConfigurationError("监测日期必须为正且严格递增", "dates")
    if scheme == "bridge" and not is_power_of_two(times.size):
        raise ConfigurationError(f"bridge方案要求日期数为2的幂，收到 {times.size}", "dates")
    return times


def path_dimension(h: int, scheme: str) -> int:
    """路径问题的QMC维数"""
    return 3 * h if scheme == "naive" else 3 * h + 2 * (h - 1)


def time_change(params: HestonParams, t):
    """c(t) = σ²/(4κ)(e^{κt} - 1)"""
    return params.sigma ** 2 / (4.0 * params.kappa) * np.expm1(params.kappa * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class BridgeSchedule:
    """桥接访问顺序

    日期编号 0..h，0 为起点。visits[0] 为终点 h，其后按层次访问中点；
    left/right 为条件端点编号（终点的 right 记为 -1）。
    """
    visits: Tuple[int, ...]
    left: Tuple[int, ...]
    right: Tuple[int, ...]

    @classmethod
    def for_dates(cls, h: int) -> 'BridgeSchedule':
        if not is_power_of_two(h):
            raise ConfigurationError(f"bridge方案要求日期数为2的幂，收到 {h}", "dates")
        visits, left, right = [h], [0], [-1]
        step = h
        while step > 1:
            half = step // 2
            for l in range(0, h, step):
                visits.append(l + half)
                left.append(l)
                right.append(l + step)
            step = half
        return cls(tuple(visits), tuple(left), tuple(right))

    def interior(self) -> List[Tuple[int, int, int, int]]:
        """(访问序号, 日期, 左端点, 右端点)，不含终点"""
        return [(k, self.visits[k], self.left[k], self.right[k]) for k in range(1, len(self.visits))]


@dataclass
class PathGrid:
    """h 个监测日期上的路径，数组形状均为 (n, h)，第 i 列对应区间 (t_{i-1}, t_i]"""
    times: np.ndarray
    s0: float
    v0: float
    rate: float
    v: np.ndarray
    iv: np.ndarray
    z: np.ndarray
    s: np.ndarray

    @property
    def h(self) -> int:
        return self.times.size

    @property
    def count(self) -> int:
        return self.s.shape[0]

    @property
    def steps(self) -> np.ndarray:
        return np.diff(np.concatenate(([0.0], self.times)))

    @property
    def expiry(self) -> float:
        return float(self.times[-1])

    def average(self) -> np.ndarray:
        return self.s.mean(axis=1)


@dataclass(frozen=True)
class LogPriceBridgeCoeffs:
    """给定方差路径后 log S 的累积漂移与累积方差，形状 (n, h+1)，第0列对应 t_0 = 0

    μ_i = log S₀ + r t_i - ½Σ∫V + ρΣ∫√V dW²，σ²_i = (1-ρ²)Σ∫V
    """
    drift: np.ndarray
    variance: np.ndarray

    @classmethod
    def from_increments(cls, s0: float, times, iv: np.ndarray, z: np.ndarray,
                        rho: float, rate: float) -> 'LogPriceBridgeCoeffs':
        n = iv.shape[0]
        t_full = np.concatenate(([0.0], np.asarray(times, dtype=float)))
        cum_iv = np.concatenate((np.zeros((n, 1)), np.cumsum(iv, axis=1)), axis=1)
        cum_z = np.concatenate((np.zeros((n, 1)), np.cumsum(z, axis=1)), axis=1)
        drift = math.log(s0) + rate * t_full[None, :] - 0.5 * cum_iv + rho * cum_z
        return cls(drift=drift, variance=(1.0 - rho ** 2) * cum_iv)


def bridge_step(log_left, log_right, drift, variance) -> Tuple[np.ndarray, np.ndarray]:
    """三点条件正态分布：给定 log S_l、log S_r 时 log S_i 的均值 a 与方差 b

    drift、variance 为 (μ_l, μ_i, μ_r)、(σ²_l, σ²_i, σ²_r)。σ²_r = σ²_l 时该点退化为确定值。
    """
    mu_l, mu_i, mu_r = drift
    var_l, var_i, var_r = variance
    near = np.asarray(var_i - var_l, dtype=float)
    span = np.asarray(var_r - var_l, dtype=float)
    live = span > 0.0
    weight = np.where(live, near / np.where(live, span, 1.0), 0.0)
    mean = log_left + mu_i - mu_l + weight * (log_right - log_left + mu_l - mu_r)
    var = np.maximum(near - weight * near, 0.0)
    return mean, var


def sequential_variance_path(params: HestonParams, times, u: np.ndarray) -> np.ndarray:
    """按时间顺序逐段抽样方差，u 为 (n, h)"""
    times = np.asarray(times, dtype=float)
    v = np.empty((u.shape[0], times.size))
    previous, t_prev = np.full(u.shape[0], params.v0), 0.0
    for i, t in enumerate(times):
        previous = variance_transition_quantile(params, previous, t - t_prev, u[:, i])
        v[:, i] = previous
        t_prev = t
    return v


def sqrt_bridge_path(params: HestonParams, times, u: np.ndarray, aux: Optional[np.ndarray] = None) -> np.ndarray:
    """平方根过程的桥接抽样

    终点由 u[:,0] 经非中心卡方分位数得到；第 k 个内部点在时间变换坐标 s = c(t) 中抽样：
      P ~ Poisson((x_l b/a + x_r a/b) / (2(a+b)))      aux[:, 2(k-1)]
      Z ~ Bessel(δ/2 - 1, √(x_l x_r)/(a+b))            aux[:, 2(k-1)+1]
      X ~ Gamma(P + 2Z + δ/2, 速率 (a+b)/(2ab))          u[:, k]
    其中 a = s_i - s_l，b = s_r - s_i，X = e^{κt}V。

    Args:
        params: 模型参数
        times: 监测日期（个数为2的幂）
        u: (n, h) 均匀坐标，按桥接访问顺序
        aux: (n, 2(h-1)) 辅助坐标

    Returns:
        (n, h) 方差路径
    """
    times = check_grid(times, "bridge")
    h = times.size
    n = u.shape[0]
    if h > 1 and (aux is None or aux.shape[1] < 2 * (h - 1)):
        raise ConfigurationError(f"bridge方案需要 {2 * (h - 1)} 个辅助坐标", "dimension")

    schedule = BridgeSchedule.for_dates(h)
    t_full = np.concatenate(([0.0], times))
    s_full = time_change(params, t_full)
    growth = np.exp(params.kappa * t_full)
    delta = params.dimension

    v = np.empty((n, h))
    x = np.empty((n, h + 1))
    x[:, 0] = params.v0
    v[:, h - 1] = variance_transition_quantile(params, params.v0, times[-1], u[:, 0])
    x[:, h] = growth[h] * v[:, h - 1]

    for k, i, l, r in schedule.interior():
        a = s_full[i] - s_full[l]
        b = s_full[r] - s_full[i]
        x_l, x_r = x[:, l], x[:, r]
        poisson_mean = (x_l * b / a + x_r * a / b) / (2.0 * (a + b))
        jumps = poisson_quantile(poisson_mean, aux[:, 2 * (k - 1)])
        bessel = bessel_quantile_batch(0.5 * delta - 1.0, np.sqrt(x_l * x_r) / (a + b), aux[:, 2 * (k - 1) + 1])
        x[:, i] = gamma_quantile(jumps + 2.0 * bessel + 0.5 * delta, (a + b) / (2.0 * a * b), u[:, k])
        v[:, i - 1] = x[:, i] / growth[i]

    logger.debug(f"桥接方差路径完成: n={n}, h={h}")
    return v


def fill_integrated_variance(params: HestonParams, times, v: np.ndarray,
                             u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """逐区间抽样 ∫V ds 并还原 ∫√V dW²

    Args:
        params: 模型参数
        times: 监测日期
        v: (n, h) 方差路径
        u: (n, h) 均匀坐标，按时间顺序

    Returns:
        (iv, z)，形状均为 (n, h)
    """
    times = np.asarray(times, dtype=float)
    n, h = v.shape
    iv = np.empty((n, h))
    z = np.empty((n, h))
    start, t_prev = np.full(n, params.v0), 0.0
    for i, t in enumerate(times):
        dt = t - t_prev
        iv[:, i] = sample_integrated_variance(params, dt, start, v[:, i], u[:, i])
        z[:, i] = recover_stoch_integral(params, start, v[:, i], iv[:, i], dt)
        start, t_prev = v[:, i], t
    return iv, z


def sequential_stock_path(coeffs: LogPriceBridgeCoeffs, u: np.ndarray) -> np.ndarray:
    """按时间顺序抽样价格，u 为 (n, h)"""
    drift, variance = coeffs.drift, coeffs.variance
    h = drift.shape[1] - 1
    normals = normal_quantile(u[:, :h])
    log_s = np.empty_like(drift)
    log_s[:, 0] = drift[:, 0]
    for i in range(1, h + 1):
        log_s[:, i] = drift[:, i] + (log_s[:, i - 1] - drift[:, i - 1]) + \
            np.sqrt(variance[:, i] - variance[:, i - 1]) * normals[:, i - 1]
    return np.exp(log_s[:, 1:])


def stock_bridge_path(coeffs: LogPriceBridgeCoeffs, s0: float, u: np.ndarray) -> np.ndarray:
    """价格过程的桥接抽样：先终点 s_h = exp(μ_h + σ_h Z)，再按层次用 bridge_step 填充中点

    Args:
        coeffs: 累积漂移与方差
        s0: 初始价格
        u: (n, h) 均匀坐标，按桥接访问顺序

    Returns:
        (n, h) 价格路径
    """
    drift, variance = coeffs.drift, coeffs.variance
    h = drift.shape[1] - 1
    schedule = BridgeSchedule.for_dates(h)
    normals = normal_quantile(u[:, :h])
    log_s = np.empty_like(drift)
    log_s[:, 0] = math.log(s0)
    log_s[:, h] = drift[:, h] + np.sqrt(variance[:, h]) * normals[:, 0]
    for k, i, l, r in schedule.interior():
        mean, var = bridge_step(log_s[:, l], log_s[:, r],
                                (drift[:, l], drift[:, i], drift[:, r]),
                                (variance[:, l], variance[:, i], variance[:, r]))
        log_s[:, i] = mean + np.sqrt(var) * normals[:, k]
    return np.exp(log_s[:, 1:])


def variance_path(params: HestonParams, times, scheme: str, u_v: np.ndarray,
                  aux: Optional[np.ndarray] = None) -> np.ndarray:
    """按方案选择方差路径的构造方式"""
    if scheme == "bridge":
        return sqrt_bridge_path(params, times, u_v, aux)
    return sequential_variance_path(params, times, u_v)


def build_path(params: HestonParams, times, scheme: str, u: np.ndarray,
               rate: Optional[float] = None) -> PathGrid:
    """生成完整路径

    Args:
        params: 模型参数
        times: 监测日期
        scheme: "naive" 或 "bridge"
        u: (n, path_dimension(h, scheme)) 均匀坐标
        rate: 价格漂移，默认 params.r（SVJ模型传入补偿后的漂移）

    Returns:
        PathGrid（贴现率为 params.r）
    """
    times = check_grid(times, scheme)
    h = times.size
    u = np.atleast_2d(u)
    needed = path_dimension(h, scheme)
    if u.shape[1] < needed:
        raise ConfigurationError(f"{scheme}方案需要 {needed} 维坐标，收到 {u.shape[1]}", "dimension")
    drift_rate = params.r if rate is None else rate

    aux = u[:, 3 * h:needed] if scheme == "bridge" else None
    v = variance_path(params, times, scheme, u[:, :h], aux)
    iv, z = fill_integrated_variance(params, times, v, u[:, h:2 * h])
    coeffs = LogPriceBridgeCoeffs.from_increments(params.s0, times, iv, z, params.rho, drift_rate)
    if scheme == "bridge":
        s = stock_bridge_path(coeffs, params.s0, u[:, 2 * h:3 * h])
    else:
        s = sequential_stock_path(coeffs, u[:, 2 * h:3 * h])
    return PathGrid(times=times, s0=params.s0, v0=params.v0, rate=params.r, v=v, iv=iv, z=z, s=s)
