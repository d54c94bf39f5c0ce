#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
随机波动率模型扩展

1. 两资产三因子模型：
     dS¹/S¹ = r dt + √V¹ dB¹ + √V³ dB³ 的相关形式，S² 同理共享第三个方差因子，
     每个因子 V^k 是一个平方根过程，与对应的 W^k 相关系数为 ρ_k。
   给定三个因子的 (∫V, ∫√V dW) 后两个对数价格服从二元正态分布，
   协方差来自共享的 B³ 项 (1-ρ₃²)∫V³。
2. 3/2 模型 dV = κV(θ - V)dt + εV^{3/2}dW：X = 1/V 是平方根过程，
   积分 ∫ds/X 的条件采样器由外部提供。
"""

import math
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np

from errors import ConfigurationError, DomainError, UnsupportedOperationError
from heston_core import (HestonParams, recover_stoch_integral, sample_integrated_variance,
                         variance_transition_quantile)
from bridge_paths import (BridgeSchedule, LogPriceBridgeCoeffs, PathGrid, check_grid,
                          fill_integrated_variance, path_dimension, sequential_stock_path,
                          stock_bridge_path, variance_path)
from quantiles import normal_quantile

# 配置日志
logger = logging.getLogger('SvExtensions')

FACTOR_COUNT = 3


@dataclass(frozen=True)
class VarianceFactor:
    """一个平方根方差因子 (κ, θ, σ, ρ, V₀)，ρ 为因子噪声与对应价格噪声的相关系数"""
    kappa: float
    theta: float
    sigma: float
    rho: float
    v0: float

    def as_heston(self, s0: float = 1.0, r: float = 0.0) -> HestonParams:
        """借用 HestonParams 的校验与方差采样函数"""
        return HestonParams(s0=s0, v0=self.v0, kappa=self.kappa, theta=self.theta,
                            sigma=self.sigma, rho=self.rho, r=r)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'VarianceFactor':
        lowered = {k.lower(): v for k, v in values.items()}
        return cls(**{name: float(lowered[name]) for name in ("kappa", "theta", "sigma", "rho", "v0")})


@dataclass(frozen=True)
class MultiAssetParams:
    """两资产三因子模型参数，factors[2] 为共享因子"""
    s0: Tuple[float, float]
    factors: Tuple[VarianceFactor, VarianceFactor, VarianceFactor]
    r: float

    def __post_init__(self):
        if len(self.s0) != 2 or len(self.factors) != FACTOR_COUNT:
            raise ConfigurationError("多资产模型需要2个初始价格与3个方差因子", "params")
        if min(self.s0) <= 0.0:
            raise DomainError(f"初始价格必须为正: {self.s0}")
        for factor in self.factors:
            factor.as_heston()

    def swapped(self) -> 'MultiAssetParams':
        """交换两个资产（及其专属因子）的标签"""
        f1, f2, f3 = self.factors
        return MultiAssetParams(s0=(self.s0[1], self.s0[0]), factors=(f2, f1, f3), r=self.r)

    def with_spot(self, s0: Tuple[float, float]) -> 'MultiAssetParams':
        return MultiAssetParams(s0=tuple(s0), factors=self.factors, r=self.r)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'MultiAssetParams':
        factors = tuple(VarianceFactor.from_dict(f) for f in values["factors"])
        return cls(s0=tuple(float(s) for s in values["s0"]), factors=factors, r=float(values["r"]))


class MultiAssetTerminal(NamedTuple):
    """两资产终端模拟结果，iv 与 z 的形状为 (n, 3)"""
    s1: np.ndarray
    s2: np.ndarray
    iv: np.ndarray
    z: np.ndarray


def multiasset_dimension(h: int = 1, scheme: str = "naive") -> int:
    """多资产问题维数：三个因子各 (V, ∫V) 共6h，两个价格正态2h，bridge再加每个因子 2(h-1)"""
    extra = FACTOR_COUNT * 2 * (h - 1) if scheme == "bridge" else 0
    return 8 * h + extra


def _log_drift(s0: float, r: float, t, iv_own, iv_shared, z_own, z_shared,
               rho_own: float, rho_shared: float):
    """μ_k = log S^k₀ + rt - ½(∫V^k + ∫V³) + ρ_k∫√V^k dW^k + ρ₃∫√V³ dW³"""
    return math.log(s0) + r * t - 0.5 * (iv_own + iv_shared) + rho_own * z_own + rho_shared * z_shared


def _symmetric_root_apply(a11, a12, a22, g1, g2) -> Tuple[np.ndarray, np.ndarray]:
    """用2×2对称正定矩阵的对称平方根 (M + sI)/√(tr M + 2s)（s = √det M）作用于 (g1, g2)

    交换两个分量时输出严格交换。
    """
    det = np.maximum(a11 * a22 - a12 * a12, 0.0)
    s = np.sqrt(det)
    norm = np.sqrt(a11 + a22 + 2.0 * s)
    live = norm > 0.0
    safe = np.where(live, norm, 1.0)
    r11 = np.where(live, (a11 + s) / safe, 0.0)
    r22 = np.where(live, (a22 + s) / safe, 0.0)
    r12 = np.where(live, a12 / safe, 0.0)
    return r11 * g1 + r12 * g2, r22 * g2 + r12 * g1


def _factor_covariance(params: MultiAssetParams, iv: Sequence[np.ndarray], correlated: bool):
    """(Σ11, Σ12, Σ22)：专属项 (1-ρ_k²)∫V^k 加共享项 (1-ρ₃²)∫V³"""
    f1, f2, f3 = params.factors
    shared = (1.0 - f3.rho ** 2) * iv[2]
    cross = shared if correlated else np.zeros_like(shared)
    return (1.0 - f1.rho ** 2) * iv[0] + shared, cross, (1.0 - f2.rho ** 2) * iv[1] + shared


def multiasset_terminal(params: MultiAssetParams, expiry: float, u: np.ndarray,
                        correlated: bool = True) -> MultiAssetTerminal:
    """八维坐标的两资产终端模拟

    坐标布局 [V¹, V², V³, ∫V¹, ∫V², ∫V³, 正态¹, 正态²]。

    Args:
        params: 模型参数
        expiry: 到期时间
        u: (n, 8) 均匀坐标
        correlated: False 时两个价格的正态部分独立（忽略共享项的协方差）

    Returns:
        MultiAssetTerminal
    """
    u = np.atleast_2d(u)
    if u.shape[1] < 8:
        raise ConfigurationError(f"多资产终端模拟需要8维坐标，收到 {u.shape[1]}", "dimension")
    iv, z = [], []
    for k, factor in enumerate(params.factors):
        hp = factor.as_heston()
        v_end = variance_transition_quantile(hp, factor.v0, expiry, u[:, k])
        iv_k = sample_integrated_variance(hp, expiry, factor.v0, v_end, u[:, FACTOR_COUNT + k])
        iv.append(iv_k)
        z.append(recover_stoch_integral(hp, factor.v0, v_end, iv_k, expiry))

    f1, f2, f3 = params.factors
    mu1 = _log_drift(params.s0[0], params.r, expiry, iv[0], iv[2], z[0], z[2], f1.rho, f3.rho)
    mu2 = _log_drift(params.s0[1], params.r, expiry, iv[1], iv[2], z[1], z[2], f2.rho, f3.rho)
    a11, a12, a22 = _factor_covariance(params, iv, correlated)
    e1, e2 = _symmetric_root_apply(a11, a12, a22, normal_quantile(u[:, 6]), normal_quantile(u[:, 7]))
    return MultiAssetTerminal(s1=np.exp(mu1 + e1), s2=np.exp(mu2 + e2),
                              iv=np.column_stack(iv), z=np.column_stack(z))


def _pair_bridge(log_l, log_r, mu, cov, g1, g2):
    """二元正态桥：给定 L_l、L_r 时 L_i 的抽样

    mu 为 (μ_l, μ_i, μ_r)，每个形状 (n, 2)；cov 为对应的累积协方差 (n, 2, 2)。
    """
    near = cov[1] - cov[0]
    span = cov[2] - cov[0]
    gain = near @ np.linalg.pinv(span)
    shift = (log_r - log_l - (mu[2] - mu[0]))[:, :, None]
    mean = log_l + mu[1] - mu[0] + (gain @ shift)[:, :, 0]
    resid = near - gain @ near
    e1, e2 = _symmetric_root_apply(resid[:, 0, 0], 0.5 * (resid[:, 0, 1] + resid[:, 1, 0]), resid[:, 1, 1], g1, g2)
    return mean + np.column_stack((e1, e2))


def multiasset_path(params: MultiAssetParams, times, scheme: str, u: np.ndarray,
                    correlated: bool = True) -> Tuple[PathGrid, PathGrid]:
    """两资产多日期路径

    坐标布局：[V¹ h | V² h | V³ h | ∫V¹ h | ∫V² h | ∫V³ h | 正态¹ h | 正态² h | 各因子的桥辅助坐标]，
    h=1 时与 multiasset_terminal 相同。因子方差路径使用单资产的 naive/bridge 方法，
    对数价格在 naive 方案下逐区间抽样，在 bridge 方案下用二元正态桥终点优先抽样。

    Returns:
        两个 PathGrid：v、iv 为该资产的总方差（专属因子 + 共享因子），
        z 为 ρ_k∫√V^k dW^k + ρ₃∫√V³ dW³
    """
    times = check_grid(times, scheme)
    h = times.size
    u = np.atleast_2d(u)
    needed = multiasset_dimension(h, scheme)
    if u.shape[1] < needed:
        raise ConfigurationError(f"{scheme}方案需要 {needed} 维坐标，收到 {u.shape[1]}", "dimension")
    n = u.shape[0]
    aux_width = 2 * (h - 1)

    v, iv, z = [], [], []
    for k, factor in enumerate(params.factors):
        hp = factor.as_heston()
        aux = u[:, 8 * h + k * aux_width:8 * h + (k + 1) * aux_width] if scheme == "bridge" else None
        v_k = variance_path(hp, times, scheme, u[:, k * h:(k + 1) * h], aux)
        iv_k, z_k = fill_integrated_variance(hp, times, v_k, u[:, (FACTOR_COUNT + k) * h:(FACTOR_COUNT + k + 1) * h])
        v.append(v_k)
        iv.append(iv_k)
        z.append(z_k)

    zeros = np.zeros((n, 1))
    cum_iv = [np.concatenate((zeros, np.cumsum(a, axis=1)), axis=1) for a in iv]
    cum_z = [np.concatenate((zeros, np.cumsum(a, axis=1)), axis=1) for a in z]
    t_full = np.concatenate(([0.0], times))[None, :]
    f1, f2, f3 = params.factors
    mu = np.stack((_log_drift(params.s0[0], params.r, t_full, cum_iv[0], cum_iv[2], cum_z[0], cum_z[2], f1.rho, f3.rho),
                   _log_drift(params.s0[1], params.r, t_full, cum_iv[1], cum_iv[2], cum_z[1], cum_z[2], f2.rho, f3.rho)),
                  axis=2)
    a11, a12, a22 = _factor_covariance(params, cum_iv, correlated)
    normals1 = normal_quantile(u[:, 6 * h:7 * h])
    normals2 = normal_quantile(u[:, 7 * h:8 * h])

    log_s = np.empty((n, h + 1, 2))
    log_s[:, 0, :] = [math.log(s) for s in params.s0]
    if scheme == "bridge":
        cov = np.stack((np.stack((a11, a12), axis=2), np.stack((a12, a22), axis=2)), axis=3)
        e1, e2 = _symmetric_root_apply(a11[:, h], a12[:, h], a22[:, h], normals1[:, 0], normals2[:, 0])
        log_s[:, h, :] = mu[:, h, :] + np.column_stack((e1, e2))
        for k, i, l, r in BridgeSchedule.for_dates(h).interior():
            log_s[:, i, :] = _pair_bridge(log_s[:, l, :], log_s[:, r, :],
                                          (mu[:, l, :], mu[:, i, :], mu[:, r, :]),
                                          (cov[:, l], cov[:, i], cov[:, r]), normals1[:, k], normals2[:, k])
    else:
        for i in range(1, h + 1):
            e1, e2 = _symmetric_root_apply(a11[:, i] - a11[:, i - 1], a12[:, i] - a12[:, i - 1],
                                           a22[:, i] - a22[:, i - 1], normals1[:, i - 1], normals2[:, i - 1])
            log_s[:, i, :] = mu[:, i, :] + (log_s[:, i - 1, :] - mu[:, i - 1, :]) + np.column_stack((e1, e2))

    grids = []
    for k, factor in enumerate(params.factors[:2]):
        grids.append(PathGrid(times=times, s0=params.s0[k], v0=factor.v0 + f3.v0, rate=params.r,
                              v=v[k] + v[2], iv=iv[k] + iv[2], z=factor.rho * z[k] + f3.rho * z[2],
                              s=np.exp(log_s[:, 1:, k])))
    logger.debug(f"多资产路径完成: n={n}, h={h}, scheme={scheme}")
    return grids[0], grids[1]


@dataclass(frozen=True)
class ThreeHalvesParams:
    """3/2 模型参数：dV = κV(θ - V)dt + εV^{3/2}dW，价格噪声与 W 的相关系数为 ρ"""
    s0: float
    v0: float
    kappa: float
    theta: float
    epsilon: float
    rho: float
    r: float

    def __post_init__(self):
        if not self.s0 > 0.0 or not self.v0 > 0.0:
            raise DomainError("3/2 模型要求 S₀ > 0 且 V₀ > 0")
        if not self.kappa > 0.0 or not self.theta > 0.0 or not self.epsilon > 0.0:
            raise DomainError("3/2 模型要求 κ, θ, ε > 0")
        if not -1.0 < self.rho < 1.0:
            raise DomainError(f"相关系数必须位于(-1,1)内: {self.rho}")

    def inverse_process(self) -> HestonParams:
        """X = 1/V 的平方根过程参数：κ' = κθ，θ' = (κ + ε²)/(κθ)，σ' = ε，X₀ = 1/V₀"""
        kappa = self.kappa * self.theta
        return HestonParams(s0=self.s0, v0=1.0 / self.v0, kappa=kappa,
                            theta=(self.kappa + self.epsilon ** 2) / kappa,
                            sigma=self.epsilon, rho=self.rho, r=self.r)


class IntegratedVarianceSampler(Protocol):
    """∫ds/X | X_u, X_t 的采样器接口

    输入区间长度、端点 X 值与均匀坐标，返回积分样本。
    """

    def __call__(self, params: ThreeHalvesParams, dt: float, x_start: np.ndarray,
                 x_end: np.ndarray, u: np.ndarray) -> np.ndarray:
        ...


@dataclass
class ConditionedEulerSampler:
    """以Euler格式模拟的引导桥 dX = (x_end - X)/(t - s)ds + ε√X dW，累加 ∫ds/X

    仅用于测试，精度取决于步数；噪声来自内部随机数发生器，不使用传入的均匀坐标。
    """
    steps: int = 200
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)
    _lock: threading.Lock = field(init=False, repr=False)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)
        self._lock = threading.Lock()

    def __call__(self, params: ThreeHalvesParams, dt: float, x_start: np.ndarray,
                 x_end: np.ndarray, u: np.ndarray) -> np.ndarray:
        x_start = np.asarray(x_start, dtype=float)
        x_end = np.broadcast_to(np.asarray(x_end, dtype=float), x_start.shape)
        with self._lock:
            noise = self._rng.standard_normal((x_start.size, self.steps))
        step = dt / self.steps
        x = x_start.copy()
        total = np.zeros_like(x)
        floor = 1e-3 * np.minimum(x_start, x_end)
        for k in range(self.steps):
            x_next = x + (x_end - x) / (dt - k * step) * step + \
                params.epsilon * np.sqrt(x) * math.sqrt(step) * noise[:, k]
            x_next = np.maximum(x_next, floor)
            total += 0.5 * step * (1.0 / x + 1.0 / x_next)
            x = x_next
        return total


def recover_threehalves_integral(params: ThreeHalvesParams, x_start, x_end, integral, dt: float):
    """∫√V dW = (1/ε)(log(X_u/X_t) + (κ + ε²/2)∫ds/X - κθΔt)，u < t"""
    return (np.log(np.asarray(x_start) / np.asarray(x_end)) + (params.kappa + 0.5 * params.epsilon ** 2)
            * np.asarray(integral) - params.kappa * params.theta * dt) / params.epsilon


def threehalves_path_skeleton(params: ThreeHalvesParams, times, scheme: str, u: np.ndarray,
                              iv_sampler: Optional[IntegratedVarianceSampler] = None) -> PathGrid:
    """3/2 模型路径

    X 路径由平方根过程的 naive/bridge 方法生成，V = 1/X；每个区间的 ∫V ds = ∫ds/X
    由 iv_sampler 给出，再还原随机积分并按Heston的价格公式抽样价格。坐标布局与Heston路径相同。

    Raises:
        UnsupportedOperationError: 未提供积分采样器
    """
    if iv_sampler is None:
        raise UnsupportedOperationError("3/2 模型需要提供 ∫ds/X 的条件采样器")
    times = check_grid(times, scheme)
    h = times.size
    u = np.atleast_2d(u)
    needed = path_dimension(h, scheme)
    if u.shape[1] < needed:
        raise ConfigurationError(f"{scheme}方案需要 {needed} 维坐标，收到 {u.shape[1]}", "dimension")

    xp = params.inverse_process()
    aux = u[:, 3 * h:needed] if scheme == "bridge" else None
    x = variance_path(xp, times, scheme, u[:, :h], aux)
    if np.any(x <= 0.0):
        raise DomainError("X 路径触及0，V = 1/X 无定义")

    n = u.shape[0]
    iv = np.empty((n, h))
    z = np.empty((n, h))
    start, t_prev = np.full(n, xp.v0), 0.0
    for i, t in enumerate(times):
        dt = t - t_prev
        iv[:, i] = iv_sampler(params, dt, start, x[:, i], u[:, h + i])
        z[:, i] = recover_threehalves_integral(params, start, x[:, i], iv[:, i], dt)
        start, t_prev = x[:, i], t

    coeffs = LogPriceBridgeCoeffs.from_increments(params.s0, times, iv, z, params.rho, params.r)
    if scheme == "bridge":
        s = stock_bridge_path(coeffs, params.s0, u[:, 2 * h:3 * h])
    else:
        s = sequential_stock_path(coeffs, u[:, 2 * h:3 * h])
    return PathGrid(times=times, s0=params.s0, v0=params.v0, rate=params.r, v=1.0 / x, iv=iv, z=z, s=s)
