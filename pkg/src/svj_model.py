#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
SVJ（带跳跃的随机波动率）模型模块

价格 S_t = S̃_t · Π Ỹ_j，S̃ 是漂移为 r - λμ̄ 的Heston价格，跳跃次数 N_t 为强度 λ 的
Poisson过程，log Ỹ_j ~ N(μ_S, σ_S²)。给定跳跃次数后跳跃对数和服从正态分布，
因此每个区间只需两个坐标（次数、对数和），问题维数保持固定。

坐标布局：
  终端 : [V_T, ∫V, 终端正态, N_T, 跳跃和]                                  共 5 维
  路径 : [Heston 3h | 次数 h | 跳跃和 h | 方差桥辅助坐标 2(h-1)（仅bridge）]
"""

import math
import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, NamedTuple, Tuple

import numpy as np

from errors import ConfigurationError, DomainError
from heston_core import HestonParams, exact_terminal
from bridge_paths import (BridgeSchedule, PathGrid, bridge_step, build_path, check_grid,
                          path_dimension)
from quantiles import binomial_quantile, normal_quantile, poisson_quantile

# 配置日志
logger = logging.getLogger('SvjModel')


@dataclass(frozen=True)
class SvjParams:
    """SVJ模型参数

    Args:
        heston: 扩散部分参数（r 为无风险利率）
        jump_intensity: 跳跃强度 λ ≥ 0
        mean_jump: 平均相对跳跃 μ̄ > -1
        jump_vol: 对数跳跃标准差 σ_S ≥ 0
    """
    heston: HestonParams
    jump_intensity: float
    mean_jump: float
    jump_vol: float

    def __post_init__(self):
        if not self.jump_intensity >= 0.0:
            raise DomainError(f"跳跃强度不能为负: {self.jump_intensity}")
        if not self.mean_jump > -1.0:
            raise DomainError(f"平均相对跳跃必须大于-1: {self.mean_jump}")
        if not self.jump_vol >= 0.0:
            raise DomainError(f"跳跃波动率不能为负: {self.jump_vol}")

    @property
    def log_jump_mean(self) -> float:
        """μ_S = log(1+μ̄) - ½σ_S²"""
        return math.log1p(self.mean_jump) - 0.5 * self.jump_vol ** 2

    @property
    def compensated_rate(self) -> float:
        """扩散部分的漂移 r - λμ̄"""
        return self.heston.r - self.jump_intensity * self.mean_jump

    @classmethod
    def from_log_moments(cls, heston: HestonParams, jump_intensity: float,
                         log_jump_mean: float, jump_vol: float) -> 'SvjParams':
        """由 (μ_S, σ_S) 构造，μ̄ = exp(μ_S + ½σ_S²) - 1"""
        mean_jump = math.expm1(log_jump_mean + 0.5 * jump_vol ** 2)
        return cls(heston, jump_intensity, mean_jump, jump_vol)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'SvjParams':
        """从配置字典构造，跳跃均值可以给 mu_bar 或 mu_s（对数均值）"""
        lowered = {k.lower(): v for k, v in values.items()}
        heston = HestonParams.from_dict({k: v for k, v in lowered.items()
                                         if k in HestonParams.__dataclass_fields__})
        intensity = float(lowered.get("lambda", lowered.get("jump_intensity", 0.0)))
        jump_vol = float(lowered.get("sigma_s", lowered.get("jump_vol", 0.0)))
        if "mu_bar" in lowered:
            return cls(heston, intensity, float(lowered["mu_bar"]), jump_vol)
        if "mu_s" in lowered:
            return cls.from_log_moments(heston, intensity, float(lowered["mu_s"]), jump_vol)
        return cls(heston, intensity, float(lowered.get("mean_jump", 0.0)), jump_vol)

    def with_spot(self, s0: float) -> 'SvjParams':
        return replace(self, heston=self.heston.with_spot(s0))

    def with_rate(self, r: float) -> 'SvjParams':
        return replace(self, heston=self.heston.with_rate(r))


@dataclass
class JumpPath:
    """各监测日期的累计跳跃次数与累计对数跳跃和，形状 (n, h)"""
    counts: np.ndarray
    sums: np.ndarray

    def increments(self) -> Tuple[np.ndarray, np.ndarray]:
        n = self.counts.shape[0]
        counts = np.diff(np.concatenate((np.zeros((n, 1), dtype=self.counts.dtype), self.counts), axis=1), axis=1)
        sums = np.diff(np.concatenate((np.zeros((n, 1)), self.sums), axis=1), axis=1)
        return counts, sums


class SvjTerminal(NamedTuple):
    """单日期SVJ模拟结果"""
    v: np.ndarray
    iv: np.ndarray
    z: np.ndarray
    s: np.ndarray
    count: np.ndarray
    jump: np.ndarray


def svj_dimension(h: int, scheme: str) -> int:
    """SVJ路径问题的维数，h=1 时为5"""
    return path_dimension(h, scheme) + 2 * h


def jump_sum_quantile(params: SvjParams, count, p):
    """给定跳跃次数 k 的对数跳跃和 N(kμ_S, kσ_S²) 的分位数"""
    count = np.asarray(count, dtype=float)
    return count * params.log_jump_mean + np.sqrt(count) * params.jump_vol * normal_quantile(p)


def svj_terminal(params: SvjParams, expiry: float, u: np.ndarray) -> SvjTerminal:
    """五维坐标的SVJ精确模拟

    Args:
        params: 模型参数
        expiry: 到期时间
        u: (n, 5) 均匀坐标

    Returns:
        SvjTerminal，λ=0 时价格与Heston终端模拟逐位相同
    """
    u = np.atleast_2d(u)
    if u.shape[1] < 5:
        raise ConfigurationError(f"SVJ终端模拟需要5维坐标，收到 {u.shape[1]}", "dimension")
    state = exact_terminal(params.heston, expiry, u[:, :3], rate=params.compensated_rate)
    count = poisson_quantile(params.jump_intensity * expiry, u[:, 3])
    jump = jump_sum_quantile(params, count, u[:, 4])
    return SvjTerminal(v=state.v, iv=state.iv, z=state.z, s=state.s * np.exp(jump),
                       count=np.asarray(count), jump=jump)


def poisson_bridge_count(n_start, n_end, t_start: float, t_mid: float, t_end: float, p):
    """Poisson计数的桥：N_u | N_s, N_t 等于 N_s + Bin(N_t - N_s, (u-s)/(t-s))

    Args:
        n_start, n_end: 左右端点的计数 N_s ≤ N_t
        t_start, t_mid, t_end: 时间 s < u < t
        p: 概率

    Returns:
        中间时刻的计数
    """
    if not t_start < t_mid < t_end:
        raise DomainError(f"桥接时间必须满足 s < u < t: {t_start}, {t_mid}, {t_end}")
    n_start = np.asarray(n_start, dtype=np.int64)
    n_end = np.asarray(n_end, dtype=np.int64)
    if np.any(n_end < n_start):
        raise DomainError("右端点计数不能小于左端点计数")
    theta = (t_mid - t_start) / (t_end - t_start)
    return n_start + binomial_quantile(n_end - n_start, theta, p)


def jumpsum_bridge(params: SvjParams, j_left, j_right, counts, p):
    """给定三个时刻的跳跃次数与两端对数跳跃和，中间时刻的对数跳跃和

    μ_i = N_i μ_S、σ²_i = N_i σ_S²，条件分布与价格桥的条件正态分布形式相同；
    N_r = N_l 时直接返回 J_l。

    Args:
        params: 模型参数
        j_left, j_right: J_l, J_r
        counts: (N_l, N_i, N_r)
        p: 概率

    Returns:
        J_i
    """
    n_l, n_i, n_r = (np.asarray(c, dtype=float) for c in counts)
    if np.any(n_i < n_l) or np.any(n_r < n_i):
        raise DomainError("跳跃次数必须满足 N_l ≤ N_i ≤ N_r")
    mu, var = params.log_jump_mean, params.jump_vol ** 2
    mean, spread = bridge_step(np.asarray(j_left, dtype=float), np.asarray(j_right, dtype=float),
                               (n_l * mu, n_i * mu, n_r * mu), (n_l * var, n_i * var, n_r * var))
    return mean + np.sqrt(spread) * normal_quantile(p)


def sequential_jump_path(params: SvjParams, times: np.ndarray, u_count: np.ndarray,
                         u_sum: np.ndarray) -> JumpPath:
    """按时间顺序抽样：每个区间的跳跃次数增量与对应的对数跳跃和"""
    steps = np.diff(np.concatenate(([0.0], times)))
    increments = poisson_quantile(params.jump_intensity * steps[None, :], u_count)
    counts = np.cumsum(increments, axis=1)
    sums = np.cumsum(jump_sum_quantile(params, increments, u_sum), axis=1)
    return JumpPath(counts=counts, sums=sums)


def bridge_jump_path(params: SvjParams, times: np.ndarray, u_count: np.ndarray,
                     u_sum: np.ndarray) -> JumpPath:
    """终点优先抽样：计数用二项桥，对数跳跃和用条件正态桥，坐标按桥接访问顺序"""
    n, h = u_count.shape
    schedule = BridgeSchedule.for_dates(h)
    t_full = np.concatenate(([0.0], times))
    counts = np.zeros((n, h + 1), dtype=np.int64)
    sums = np.zeros((n, h + 1))
    counts[:, h] = poisson_quantile(params.jump_intensity * times[-1], u_count[:, 0])
    sums[:, h] = jump_sum_quantile(params, counts[:, h], u_sum[:, 0])
    for k, i, l, r in schedule.interior():
        counts[:, i] = poisson_bridge_count(counts[:, l], counts[:, r], t_full[l], t_full[i], t_full[r],
                                            u_count[:, k])
        sums[:, i] = jumpsum_bridge(params, sums[:, l], sums[:, r],
                                    (counts[:, l], counts[:, i], counts[:, r]), u_sum[:, k])
    return JumpPath(counts=counts[:, 1:], sums=sums[:, 1:])


def build_svj_path(params: SvjParams, times, scheme: str, u: np.ndarray) -> Tuple[PathGrid, JumpPath]:
    """生成SVJ路径

    扩散部分交给 build_path（漂移 r - λμ̄），跳跃次数与跳跃和按相同方案
    （naive 按时间顺序，bridge 终点优先）生成，最后 s_i ← s_i·e^{J_i}。

    Args:
        params: 模型参数
        times: 监测日期
        scheme: "naive" 或 "bridge"
        u: (n, svj_dimension(h, scheme)) 均匀坐标

    Returns:
        (PathGrid, JumpPath)
    """
    times = check_grid(times, scheme)
    h = times.size
    u = np.atleast_2d(u)
    needed = svj_dimension(h, scheme)
    if u.shape[1] < needed:
        raise ConfigurationError(f"{scheme}方案需要 {needed} 维坐标，收到 {u.shape[1]}", "dimension")

    diffusion_u = np.concatenate((u[:, :3 * h], u[:, 5 * h:needed]), axis=1)
    grid = build_path(params.heston, times, scheme, diffusion_u, rate=params.compensated_rate)
    u_count, u_sum = u[:, 3 * h:4 * h], u[:, 4 * h:5 * h]
    if scheme == "bridge":
        jumps = bridge_jump_path(params, times, u_count, u_sum)
    else:
        jumps = sequential_jump_path(params, times, u_count, u_sum)
    logger.debug(f"SVJ路径完成: n={u.shape[0]}, h={h}, 平均跳跃次数={jumps.counts[:, -1].mean():.4f}")
    return replace(grid, s=grid.s * np.exp(jumps.sums)), jumps
