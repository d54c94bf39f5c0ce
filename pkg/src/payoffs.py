#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
收益函数与希腊值模块

  - 欧式、亚式、离散监测向下敲出看涨期权的贴现收益
  - 向下敲出期权的单步存活（one-step survival）估计量与朴素敲出估计量
  - 亚式期权的路径导数（PW）与似然比（LR）希腊值估计量

LR估计量以方差路径为条件变量：给定方差路径后，每一步的价格比值服从对数正态分布，
score 即为标准化的步长增量 d_i。
"""

import math
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import special

from errors import ConfigurationError, DomainError
from heston_core import HestonParams
from bridge_paths import (PathGrid, check_grid, fill_integrated_variance, path_dimension,
                          variance_path)
from qmc_sampler import LOWER_CLAMP, UPPER_CLAMP, DigitalNet, EstimatorReport, rqmc_estimate
from quantiles import normal_quantile
from svj_model import JumpPath, SvjParams

# 配置日志
logger = logging.getLogger('Payoffs')

GREEK_KINDS = ("Delta", "Gamma", "Rho")
GREEK_METHODS = ("PW", "LR")
# asian_greek_values 各列对应的 (希腊值, 方法)
GREEK_COLUMNS = (("Delta", "PW"), ("Rho", "PW"), ("Delta", "LR"), ("Gamma", "LR"), ("Rho", "LR"))


@dataclass(frozen=True)
class AsianSpec:
    """算术平均亚式看涨期权，dates 为空时使用路径的全部日期"""
    strike: float
    expiry: float
    dates: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not self.strike > 0.0:
            raise DomainError(f"行权价必须为正: {self.strike}")
        if not self.expiry > 0.0:
            raise DomainError(f"到期时间必须为正: {self.expiry}")

    def columns(self, path: PathGrid) -> np.ndarray:
        """spec 日期在路径日期中的列下标"""
        if self.dates is None:
            return np.arange(path.h)
        dates = np.asarray(self.dates, dtype=float)
        idx = np.searchsorted(path.times, dates)
        idx = np.minimum(idx, path.h - 1)
        if not np.allclose(path.times[idx], dates, rtol=0.0, atol=1e-12):
            raise ConfigurationError("路径日期不包含全部监测日期", "dates")
        return idx

    def average(self, path: PathGrid) -> np.ndarray:
        return path.s[:, self.columns(path)].mean(axis=1)


@dataclass(frozen=True)
class BarrierSpec:
    """离散监测的向下敲出看涨期权，S_{t_i} ≤ H 时敲出"""
    barrier: float
    strike: float
    expiry: float

    def __post_init__(self):
        if not self.barrier > 0.0 or not self.strike > 0.0 or not self.expiry > 0.0:
            raise DomainError("障碍、行权价与到期时间必须为正")


@dataclass(frozen=True)
class GreekEstimate:
    """一个希腊值的估计结果"""
    greek: str
    method: str
    report: EstimatorReport

    def __post_init__(self):
        if self.greek not in GREEK_KINDS or self.method not in GREEK_METHODS:
            raise ConfigurationError(f"未知的希腊值: {self.greek}/{self.method}", "greek")
        if self.greek == "Gamma" and self.method == "PW":
            raise ConfigurationError("不提供路径导数形式的Gamma估计量", "greek")


class StepQuantities(NamedTuple):
    """LR估计量所需的逐步量，形状均为 (n, h)"""
    xi: np.ndarray
    vol: np.ndarray
    score: np.ndarray


def european_call_payoff(s_end, strike: float, r: float, expiry: float) -> np.ndarray:
    return math.exp(-r * expiry) * np.maximum(np.asarray(s_end) - strike, 0.0)


def european_put_payoff(s_end, strike: float, r: float, expiry: float) -> np.ndarray:
    return math.exp(-r * expiry) * np.maximum(strike - np.asarray(s_end), 0.0)


def discounted_spot(s_end, r: float, expiry: float) -> np.ndarray:
    """e^{-rT}S_T，其期望应等于 S₀"""
    return math.exp(-r * expiry) * np.asarray(s_end)


def asian_payoff(path: PathGrid, spec: AsianSpec) -> np.ndarray:
    """e^{-rT}((1/d)ΣS_{t_i} - K)⁺"""
    return math.exp(-path.rate * spec.expiry) * np.maximum(spec.average(path) - spec.strike, 0.0)


def survival_probability(log_spot, log_barrier: float, mean, sd) -> np.ndarray:
    """一步不被敲出的概率 p = Φ((log(S/H) + m)/σ)，σ = 0 时为示性函数"""
    excess = np.asarray(log_spot - log_barrier + mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    live = sd > 0.0
    with np.errstate(divide='ignore', invalid='ignore'):
        smooth = special.ndtr(excess / np.where(live, sd, 1.0))
    return np.where(live, smooth, (excess > 0.0).astype(float))


def barrier_dimension(h: int, scheme: str) -> int:
    """障碍期权问题维数：[V h | IV h | 价格坐标 h | 方差桥辅助坐标]"""
    return path_dimension(h, scheme)


def _checked_barrier_grid(params: HestonParams, spec: BarrierSpec, times, scheme: str) -> np.ndarray:
    times = check_grid(times, scheme)
    if not spec.barrier < params.s0:
        raise DomainError(f"障碍 {spec.barrier} 必须低于初始价格 {params.s0}")
    if not math.isclose(times[-1], spec.expiry, rel_tol=1e-12, abs_tol=1e-12):
        raise DomainError(f"最后一个监测日期 {times[-1]} 必须等于到期日 {spec.expiry}")
    return times


def _barrier_steps(params: HestonParams, times: np.ndarray, scheme: str, u: np.ndarray):
    h = times.size
    needed = barrier_dimension(h, scheme)
    if u.shape[1] < needed:
        raise ConfigurationError(f"{scheme}方案需要 {needed} 维坐标，收到 {u.shape[1]}", "dimension")
    aux = u[:, 3 * h:needed] if scheme == "bridge" else None
    v = variance_path(params, times, scheme, u[:, :h], aux)
    iv, z = fill_integrated_variance(params, times, v, u[:, h:2 * h])
    steps = np.diff(np.concatenate(([0.0], times)))
    mean = params.r * steps[None, :] - 0.5 * iv + params.rho * z
    sd = np.sqrt((1.0 - params.rho ** 2) * iv)
    return mean, sd, u[:, 2 * h:3 * h]


def barrier_price_onestep_survival(params: HestonParams, spec: BarrierSpec, times, u: np.ndarray,
                                   scheme: str = "naive") -> np.ndarray:
    """单步存活估计量

    每一步以 U = 1 - p + V·p 在不敲出的条件下抽样 S_{t_{i+1}} = S_{t_i}exp(m + σΦ⁻¹(U))，
    并把存活概率 p 连乘为权重。方差路径可以按 naive 或 bridge 顺序生成。

    Args:
        params: 模型参数
        spec: 障碍期权
        times: 监测日期（最后一个为到期日）
        u: (n, barrier_dimension(h, scheme)) 均匀坐标
        scheme: 方差路径的生成方案

    Returns:
        每个点的 权重 × 贴现收益，权重位于 [0, 1]
    """
    times = _checked_barrier_grid(params, spec, times, scheme)
    u = np.atleast_2d(u)
    mean, sd, u_price = _barrier_steps(params, times, scheme, u)

    log_barrier = math.log(spec.barrier)
    log_s = np.full(u.shape[0], math.log(params.s0))
    weight = np.ones(u.shape[0])
    for i in range(times.size):
        p = survival_probability(log_s, log_barrier, mean[:, i], sd[:, i])
        level = np.clip(1.0 - p + u_price[:, i] * p, LOWER_CLAMP, UPPER_CLAMP)
        log_s = log_s + mean[:, i] + sd[:, i] * normal_quantile(level)
        weight *= p
    return weight * european_call_payoff(np.exp(log_s), spec.strike, params.r, spec.expiry)


def barrier_price_knockout(params: HestonParams, spec: BarrierSpec, times, u: np.ndarray,
                           scheme: str = "naive") -> np.ndarray:
    """朴素敲出估计量：按时间顺序模拟价格，任一监测日 S ≤ H 时收益为0"""
    times = _checked_barrier_grid(params, spec, times, scheme)
    u = np.atleast_2d(u)
    mean, sd, u_price = _barrier_steps(params, times, scheme, u)
    log_s = math.log(params.s0) + np.cumsum(mean + sd * normal_quantile(u_price), axis=1)
    alive = np.all(log_s > math.log(spec.barrier), axis=1)
    return alive * european_call_payoff(np.exp(log_s[:, -1]), spec.strike, params.r, spec.expiry)


def step_quantities(path: PathGrid, rho: float, jumps: Optional[JumpPath] = None,
                    jump_params: Optional[SvjParams] = None) -> StepQuantities:
    """逐步计算 ξ_i、σ̄_i 与 d_i

    σ̄²_i = (1-ρ²)∫V/Δt_i，ξ_i = exp(-ρ²/2·∫V + ρ∫√V dW²)，SVJ时再乘以 exp(ΔJ_i - λμ̄Δt_i)；
    d_i = (log(S_i/(S_{i-1}ξ_i)) - (r - ½σ̄²_i)Δt_i)/(σ̄_i√Δt_i)，精确模拟下 d_i 独立同分布于 N(0,1)。
    """
    dt = path.steps[None, :]
    vol = np.sqrt((1.0 - rho ** 2) * path.iv / dt)
    if np.any(vol <= 0.0):
        raise DomainError("σ̄ = 0，LR score 退化")
    log_xi = -0.5 * rho ** 2 * path.iv + rho * path.z
    if jumps is not None:
        if jump_params is None:
            raise ConfigurationError("提供跳跃路径时必须同时提供SVJ参数", "jump_params")
        _, jump_increments = jumps.increments()
        log_xi = log_xi + jump_increments - jump_params.jump_intensity * jump_params.mean_jump * dt
    previous = np.concatenate((np.full((path.count, 1), path.s0), path.s[:, :-1]), axis=1)
    score = (np.log(path.s / previous) - log_xi - (path.rate - 0.5 * vol ** 2) * dt) / (vol * np.sqrt(dt))
    return StepQuantities(xi=np.exp(log_xi), vol=vol, score=score)


def pw_delta_asian(path: PathGrid, spec: AsianSpec) -> np.ndarray:
    """e^{-rT}1{S̄≥K}S̄/S₀"""
    average = spec.average(path)
    return math.exp(-path.rate * spec.expiry) * (average >= spec.strike) * average / path.s0


def pw_rho_asian(path: PathGrid, spec: AsianSpec) -> np.ndarray:
    """e^{-rT}1{S̄≥K}((1/d)ΣS_{t_i}t_i - T(S̄-K))"""
    cols = spec.columns(path)
    average = path.s[:, cols].mean(axis=1)
    weighted = (path.s[:, cols] * path.times[cols][None, :]).mean(axis=1)
    return math.exp(-path.rate * spec.expiry) * (average >= spec.strike) * \
        (weighted - spec.expiry * (average - spec.strike))


def lr_greeks_asian(path: PathGrid, spec: AsianSpec, steps: StepQuantities) -> np.ndarray:
    """LR希腊值，返回 (n, 3) 数组，列依次为 Delta、Gamma、Rho

    Delta = P·d₁/(S₀σ̄₁√Δt₁)
    Gamma = P·(d₁² - d₁σ̄₁√Δt₁ - 1)/(S₀²σ̄₁²Δt₁)
    Rho   = P·(-T + Σd_i√Δt_i/σ̄_i)
    其中 P = e^{-rT}(S̄-K)⁺。
    """
    payoff = asian_payoff(path, spec)
    root_dt = np.sqrt(path.steps)[None, :]
    d1 = steps.score[:, 0]
    first = steps.vol[:, 0] * root_dt[0, 0]
    delta = payoff * d1 / (path.s0 * first)
    gamma = payoff * (d1 ** 2 - d1 * first - 1.0) / (path.s0 ** 2 * first ** 2)
    rho = payoff * (-spec.expiry + np.sum(steps.score * root_dt / steps.vol, axis=1))
    return np.column_stack((delta, gamma, rho))


def asian_greek_values(path: PathGrid, spec: AsianSpec, rho: float, jumps: Optional[JumpPath] = None,
                       jump_params: Optional[SvjParams] = None) -> np.ndarray:
    """同一批路径上的全部希腊值估计量，列顺序见 GREEK_COLUMNS"""
    steps = step_quantities(path, rho, jumps, jump_params)
    return np.column_stack((pw_delta_asian(path, spec), pw_rho_asian(path, spec),
                            lr_greeks_asian(path, spec, steps)))


def greek_estimates(reports: Dict[str, EstimatorReport]) -> List[GreekEstimate]:
    """把 rqmc_estimate_multi 的结果（标签见 greek_labels）整理为 GreekEstimate 列表"""
    return [GreekEstimate(greek, method, reports[f"{method.lower()}_{greek.lower()}"])
            for greek, method in GREEK_COLUMNS]


def greek_labels() -> List[str]:
    return [f"{method.lower()}_{greek.lower()}" for greek, method in GREEK_COLUMNS]


def finite_difference_greeks(pricer: Callable[[float], Callable[[np.ndarray], np.ndarray]], s0: float,
                             net: DigitalNet, q: int = 30, seed: int = 0, bump: float = 0.005,
                             max_workers: Optional[int] = None) -> Dict[str, EstimatorReport]:
    """公共随机数的中心差分 Delta 与 Gamma

    pricer(spot) 返回以该初始价格定价的被积函数；三次定价使用相同的置乱点，
    差分按批次计算，标准误差由批次差分的离散程度给出。
    """
    step = bump * s0
    up, mid, down = (rqmc_estimate(pricer(spot), net, q, seed, max_workers)
                     for spot in (s0 + step, s0, s0 - step))
    delta = (up.replicate_means - down.replicate_means) / (2.0 * step)
    gamma = (up.replicate_means - 2.0 * mid.replicate_means + down.replicate_means) / step ** 2
    return {"delta": EstimatorReport.from_replicates(delta, net.count),
            "gamma": EstimatorReport.from_replicates(gamma, net.count)}
