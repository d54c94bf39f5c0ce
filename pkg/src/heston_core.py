#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Heston模型精确模拟核心模块

以分位数函数的形式实现精确模拟的各个步骤：
  1. 方差转移 V_t | V_u：缩放的非中心卡方分布
  2. 积分方差 ∫V ds | V_u, V_t：特征函数Φ(a)经梯形公式反演得到CDF，再求根得到分位数
  3. 由恒等式还原 ∫√V dW²
  4. 终端对数价格的条件正态分布
以及基于条件Black-Scholes公式的欧式期权定价。
"""

import math
import logging
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy import special

from errors import DomainError, InversionError, NumericalError
from quantiles import log_bessel_i_continuous, ncx2_quantile, normal_quantile

# 配置日志
logger = logging.getLogger('HestonCore')

# 截断误差目标 ε
TRUNCATION_EPS = 1e-6
# 截断项数上限
MAX_TERMS = 1_000_000
# 网格步长规则中的标准差倍数
MESH_SD_MULTIPLE = 5.0
# 求根区间上端的标准差倍数
BRACKET_SD_MULTIPLE = 12.0
# 区间扩展次数
BRACKET_EXPANSIONS = 3
# 二分法终止宽度（以标准差为单位）
BISECTION_WIDTH = 1e-3
# 割线法的CDF残差容限
ROOT_TOL = 1e-7
# 矩估计时 a·m₁ 的目标大小
MOMENT_STEP = 0.05
# 批量构造分布时每块的行数
LAW_CHUNK = 4096


@dataclass(frozen=True)
class HestonParams:
    """Heston模型参数

    dS = rS dt + √V S dW¹,  dV = κ(θ - V)dt + σ√V dW²,  d⟨W¹,W²⟩ = ρ dt。
    不要求满足Feller条件 2κθ ≥ σ²。
    """
    s0: float
    v0: float
    kappa: float
    theta: float
    sigma: float
    rho: float
    r: float

    def __post_init__(self):
        if not self.s0 > 0.0:
            raise DomainError(f"初始价格必须为正: {self.s0}")
        if not self.v0 >= 0.0:
            raise DomainError(f"初始方差不能为负: {self.v0}")
        for name in ("kappa", "theta", "sigma"):
            if not getattr(self, name) > 0.0:
                raise DomainError(f"{name} 必须为正: {getattr(self, name)}")
        if not -1.0 < self.rho < 1.0:
            raise DomainError(f"相关系数必须位于(-1,1)内: {self.rho}")

    @property
    def dimension(self) -> float:
        """平方Bessel过程的维数 δ = 4κθ/σ²"""
        return 4.0 * self.kappa * self.theta / self.sigma ** 2

    @property
    def bessel_order(self) -> float:
        return 0.5 * self.dimension - 1.0

    @property
    def feller(self) -> bool:
        return 2.0 * self.kappa * self.theta >= self.sigma ** 2

    def with_spot(self, s0: float) -> 'HestonParams':
        return replace(self, s0=s0)

    def with_rate(self, r: float) -> 'HestonParams':
        return replace(self, r=r)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'HestonParams':
        """从配置字典构造，键名不区分大小写（S0/s0、V0/v0 等）"""
        lowered = {k.lower(): v for k, v in values.items()}
        return cls(**{name: float(lowered[name]) for name in ("s0", "v0", "kappa", "theta", "sigma", "rho", "r")})


def variance_transition_quantile(params: HestonParams, v_start, dt: float, p):
    """V_t | V_u = x 的分位数

    V_t ~ σ²(1-e^{-κΔt})/(4κ) · χ²_δ(λ)，λ = 4κe^{-κΔt}x / (σ²(1-e^{-κΔt}))。
    """
    if not dt > 0.0:
        raise DomainError(f"时间步长必须为正: {dt}")
    scale = params.sigma ** 2 * -math.expm1(-params.kappa * dt) / (4.0 * params.kappa)
    nc = np.asarray(v_start, dtype=float) * math.exp(-params.kappa * dt) / scale
    return scale * ncx2_quantile(params.dimension, nc, p)


def richardson_cumulants(log_cf: Callable[[np.ndarray], np.ndarray], step) -> Tuple[np.ndarray, np.ndarray]:
    """由对数特征函数的中心差分估计前两阶累积量

    利用 log Φ(-a) = conj(log Φ(a))：
      κ₁ ≈ Im log Φ(δ)/δ，κ₂ ≈ -2 Re log Φ(δ)/δ²，
    两者的误差都是 O(δ²)，用步长 δ 与 δ/2 做一次Richardson外推后为 O(δ⁴)。

    Args:
        log_cf: 输入 (..., 2) 的实数组，返回同形状的复数 log Φ
        step: 步长 δ

    Returns:
        (κ₁, κ₂)
    """
    step = np.asarray(step, dtype=float)
    a = step[..., None] * np.array([1.0, 0.5])
    values = log_cf(a)
    first = values.imag / a
    second = -2.0 * values.real / a ** 2
    k1 = (4.0 * first[..., 1] - first[..., 0]) / 3.0
    k2 = (4.0 * second[..., 1] - second[..., 0]) / 3.0
    return k1, k2


def _sine_series(theta: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Clenshaw求和 Σ_{j=1}^{K} coef[:, j-1] sin(jθ)"""
    c = 2.0 * np.cos(theta)
    b1 = np.zeros_like(theta)
    b2 = np.zeros_like(theta)
    for k in range(coef.shape[1] - 1, -1, -1):
        b1, b2 = coef[:, k] + c * b1 - b2, b1
    return b1 * np.sin(theta)


class IntegratedVarianceLaw:
    """∫_u^t V_s ds | V_u = x, V_t = y 的条件分布（按端点批量向量化）

    特征函数
        Φ(a) = γe^{-(γ-κ)Δt/2}(1-e^{-κΔt}) / (κ(1-e^{-γΔt}))
               · exp{(x+y)/σ² [κ coth(κΔt/2) - γ coth(γΔt/2)]}
               · I_ν(√(xy)·4γe^{-γΔt/2}/(σ²(1-e^{-γΔt}))) / I_ν(√(xy)·4κe^{-κΔt/2}/(σ²(1-e^{-κΔt})))
    其中 γ(a) = √(κ² - 2σ²ia)，ν = δ/2 - 1。全部在对数域中计算，Bessel函数的
    参数沿连续分支追踪。与a无关的κ项在构造时计算一次。

    CDF采用梯形公式 F(x) = hx/π + (2/π) Σ_{j≤N} sin(hjx)/j · ReΦ(hj)。
    网格步长 h 在区间上端 x_max = m₁ + 12·sd 处按规则 h = 2π/(x + |m₁| + 5·sd)
    取值（对所有 x ≤ x_max 满足该规则），于是 ReΦ(hj)/j 可以按分布缓存；
    N 为满足 |Φ(hN)|/N < πε/2 的最小整数。

    分布对象在求分位数时可能扩展缓存，不应在多个线程间共享。
    """

    def __init__(self, params: HestonParams, dt: float, v_start, v_end,
                 epsilon: float = TRUNCATION_EPS, max_terms: int = MAX_TERMS):
        if not dt > 0.0:
            raise DomainError(f"时间步长必须为正: {dt}")
        x = np.asarray(v_start, dtype=float)
        y = np.asarray(v_end, dtype=float)
        if np.any(x < 0.0) or np.any(y < 0.0):
            raise DomainError("方差端点不能为负")

        self.params = params
        self.dt = float(dt)
        self.epsilon = epsilon
        self.max_terms = max_terms
        self.shape = np.broadcast(x, y).shape
        x, y = np.broadcast_arrays(np.atleast_1d(x), np.atleast_1d(y))
        self.v_start = x.ravel().copy()
        self.v_end = y.ravel().copy()
        self.size = self.v_start.size

        self._sqrt_xy = np.sqrt(self.v_start * self.v_end)
        self._weight = (self.v_start + self.v_end) / params.sigma ** 2
        # B项：与a无关的参考项（g = κ）
        every = np.arange(self.size)
        kappa = np.full((self.size, 1), params.kappa + 0.0j)
        self._ref = self._terms(kappa, every)

        self.m1, self.m2 = self._moments()
        self.sd = np.sqrt(self.m2 - self.m1 ** 2)
        self.x_max = self.m1 + BRACKET_SD_MULTIPLE * self.sd
        self.h = np.empty(self.size)
        self.terms = np.zeros(self.size, dtype=np.int64)
        self._coef = np.zeros((self.size, 0))
        self._refresh_grid(every)

    # ------------------------------------------------------------------
    # 特征函数
    # ------------------------------------------------------------------
    def _terms(self, g: np.ndarray, rows: np.ndarray):
        """返回 (log[g e^{-gΔt/2}/(1-e^{-gΔt})], g coth(gΔt/2), log I_ν(z(g)))"""
        dt = self.dt
        nu = self.params.bessel_order
        t1 = np.log(g) - 0.5 * g * dt - np.log(-np.expm1(-g * dt))
        coth = g / np.tanh(0.5 * g * dt)

        sxy = self._sqrt_xy[rows]
        log_bessel = np.empty_like(t1)
        zero = sxy == 0.0
        log_bessel[zero] = nu * t1[zero]
        if np.any(~zero):
            live = ~zero
            log_z = np.log(4.0 * sxy[live] / self.params.sigma ** 2)[:, None] + t1[live]
            small = log_z.real < -600.0
            value = np.empty_like(log_z)
            value[small] = nu * (log_z[small] - math.log(2.0)) - special.gammaln(nu + 1.0)
            big = ~small
            value[big] = log_bessel_i_continuous(nu, np.exp(log_z[big]), log_z[big])
            log_bessel[live] = value
        return t1, coth, log_bessel

    def _log_cf(self, a: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """log Φ(a)，a 的形状为 (len(rows), K)"""
        a = np.asarray(a, dtype=float)
        kappa, sigma = self.params.kappa, self.params.sigma
        gamma = np.sqrt(kappa ** 2 - 2.0 * sigma ** 2 * 1j * a)
        t1, coth, log_bessel = self._terms(gamma, rows)
        ref_t1, ref_coth, ref_bessel = (term[rows] for term in self._ref)
        log_phi = (t1 - ref_t1) + self._weight[rows][:, None] * (ref_coth - coth) + (log_bessel - ref_bessel)
        log_phi[a == 0.0] = 0.0
        return log_phi

    def _cf(self, a: np.ndarray, rows: np.ndarray) -> np.ndarray:
        with np.errstate(over='ignore', under='ignore', invalid='ignore'):
            phi = np.exp(self._log_cf(a, rows))
        phi[~np.isfinite(phi)] = 0.0
        return phi

    def char_fn(self, a) -> np.ndarray:
        """Φ(a)，结果形状为 law.shape + a.shape"""
        a = np.asarray(a, dtype=float)
        grid = np.broadcast_to(a.ravel()[None, :], (self.size, a.size))
        phi = self._cf(grid, np.arange(self.size))
        return phi.reshape(self.shape + a.shape)[()]

    # ------------------------------------------------------------------
    # 矩
    # ------------------------------------------------------------------
    def _moments(self) -> Tuple[np.ndarray, np.ndarray]:
        kappa, theta, dt = self.params.kappa, self.params.theta, self.dt
        guess = 0.5 * dt * (self.v_start + self.v_end) + kappa * theta * dt ** 2 / 6.0
        guess = np.maximum(guess, np.finfo(float).tiny)

        def cumulants(step: np.ndarray, rows: np.ndarray):
            return richardson_cumulants(lambda a: self._log_cf(a, rows), step)

        every = np.arange(self.size)
        k1, _ = cumulants(MOMENT_STEP / guess, every)
        step = MOMENT_STEP / np.where(k1 > 0.0, k1, guess)
        k1, k2 = cumulants(step, every)

        bad = np.flatnonzero(~((k1 > 0.0) & (k2 > 0.0)))
        for _ in range(2):
            if bad.size == 0:
                break
            step[bad] *= 0.25
            logger.debug(f"{bad.size} 个分布的方差估计非正，缩小差分步长重试")
            k1[bad], k2[bad] = cumulants(step[bad], bad)
            bad = bad[~((k1[bad] > 0.0) & (k2[bad] > 0.0))]
        if bad.size:
            i = int(bad[0])
            raise NumericalError("积分方差的矩估计失败", {
                "v_start": float(self.v_start[i]), "v_end": float(self.v_end[i]),
                "dt": self.dt, "m1": float(k1[i]), "var": float(k2[i]),
            })
        return k1, k2 + k1 ** 2

    # ------------------------------------------------------------------
    # CDF反演
    # ------------------------------------------------------------------
    def _series(self, rows: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """按截断规则确定N并返回系数 ReΦ(hj)/j（j = 1..N，超出部分补零）"""
        threshold = 0.5 * math.pi * self.epsilon
        count = rows.size
        terms = np.zeros(count, dtype=np.int64)
        open_rows = np.ones(count, dtype=bool)
        pieces = []
        start, width = 1, 64
        while np.any(open_rows):
            active = np.flatnonzero(open_rows)
            if start > self.max_terms:
                i = int(active[0])
                raise InversionError("特征函数反演的截断项数超过上限", {
                    "max_terms": self.max_terms, "v_start": float(self.v_start[rows[i]]),
                    "v_end": float(self.v_end[rows[i]]), "dt": self.dt, "h": float(h[i]),
                })
            j = np.arange(start, start + width, dtype=float)
            phi = self._cf(h[active][:, None] * j[None, :], rows[active])
            values = phi.real / j
            done = np.abs(phi) / j < threshold
            hit = done.any(axis=1)
            first = np.argmax(done, axis=1)
            values[hit] = np.where(np.arange(width)[None, :] > first[hit][:, None], 0.0, values[hit])
            terms[active[hit]] = start + first[hit]
            open_rows[active[hit]] = False
            pieces.append((active, start, values))
            start += width
            width = min(2 * width, 4096)

        used = int(terms.max()) if count else 0
        coef = np.zeros((count, used))
        for active, first_j, values in pieces:
            stop = min(first_j - 1 + values.shape[1], used)
            if stop > first_j - 1:
                coef[active, first_j - 1:stop] = values[:, :stop - first_j + 1]
        return terms, coef

    def _refresh_grid(self, rows: np.ndarray):
        h = 2.0 * math.pi / (self.x_max[rows] + np.abs(self.m1[rows]) + MESH_SD_MULTIPLE * self.sd[rows])
        self.h[rows] = h
        terms, coef = self._series(rows, h)
        self.terms[rows] = terms
        width = max(coef.shape[1], self._coef.shape[1])
        if width > self._coef.shape[1]:
            self._coef = np.pad(self._coef, ((0, 0), (0, width - self._coef.shape[1])))
        self._coef[rows] = 0.0
        self._coef[rows, :coef.shape[1]] = coef
        logger.debug(f"积分方差分布网格: {rows.size} 个分布，N 最大 {int(terms.max())}")

    def _broadcast(self, values) -> Tuple[np.ndarray, np.ndarray, Tuple[int, ...]]:
        """把输入与分布批次广播，返回 (行号, 数值, 结果形状)"""
        index = np.arange(self.size).reshape(self.shape)
        index, values = np.broadcast_arrays(index, np.asarray(values, dtype=float))
        return index.ravel(), values.ravel(), values.shape

    def _cdf_rows(self, rows: np.ndarray, x: np.ndarray) -> np.ndarray:
        """在缓存网格上计算 F(x)，要求 x ≤ x_max"""
        if rows.size == 0:
            return np.zeros(0)
        h = self.h[rows]
        used = int(self.terms[rows].max())
        series = _sine_series(h * x, self._coef[rows, :used])
        return np.clip(h * x / math.pi + (2.0 / math.pi) * series, 0.0, 1.0)

    def _cdf_pointwise(self, rows: np.ndarray, x: np.ndarray) -> np.ndarray:
        """x > x_max 时逐点应用网格步长规则"""
        h = 2.0 * math.pi / (x + np.abs(self.m1[rows]) + MESH_SD_MULTIPLE * self.sd[rows])
        _, coef = self._series(rows, h)
        series = _sine_series(h * x, coef)
        return np.clip(h * x / math.pi + (2.0 / math.pi) * series, 0.0, 1.0)

    def cdf(self, x) -> np.ndarray:
        """F(x)，x 与分布批次广播"""
        rows, x, shape = self._broadcast(x)
        if np.any(x < 0.0):
            raise DomainError("积分方差的CDF只对 x ≥ 0 定义")
        out = np.empty(x.size)
        inside = x <= self.x_max[rows]
        out[inside] = self._cdf_rows(rows[inside], x[inside])
        if not np.all(inside):
            out[~inside] = self._cdf_pointwise(rows[~inside], x[~inside])
        return out.reshape(shape)[()]

    def _widen(self, rows: np.ndarray):
        self.x_max[rows] += BRACKET_SD_MULTIPLE * self.sd[rows]
        self._refresh_grid(rows)

    def quantile(self, p) -> np.ndarray:
        """F的分位数：二分到 10⁻³·sd，再用Illinois割线法把残差压到 10⁻⁷"""
        rows, p, shape = self._broadcast(p)
        if not np.all((p > 0.0) & (p < 1.0)):
            raise DomainError("概率必须位于(0,1)内")
        slack = 2.0 * self.epsilon

        top = self._cdf_rows(rows, self.x_max[rows])
        for attempt in range(BRACKET_EXPANSIONS + 1):
            short = np.flatnonzero(top < p - slack)
            if short.size == 0:
                break
            if attempt == BRACKET_EXPANSIONS:
                i = int(short[0])
                raise InversionError("找不到包含分位数的区间", {
                    "p": float(p[i]), "x_max": float(self.x_max[rows[i]]), "F(x_max)": float(top[i]),
                    "v_start": float(self.v_start[rows[i]]), "v_end": float(self.v_end[rows[i]]), "dt": self.dt,
                })
            widened = np.unique(rows[short])
            logger.warning(f"{widened.size} 个分布的求根区间不足，扩展区间上端")
            self._widen(widened)
            again = np.flatnonzero(np.isin(rows, widened))
            top[again] = self._cdf_rows(rows[again], self.x_max[rows[again]])

        result = self.x_max[rows].copy()
        solve = np.flatnonzero(top >= p)
        if solve.size < p.size:
            logger.debug(f"{p.size - solve.size} 个分位数落在截断误差带内，取区间上端")
        if solve.size == 0:
            return result.reshape(shape)[()]

        laws = rows[solve]
        target = p[solve]
        lo = np.zeros(solve.size)
        hi = self.x_max[laws].copy()
        f_lo = -target
        f_hi = top[solve] - target
        width = BISECTION_WIDTH * self.sd[laws]
        steps = int(np.ceil(np.log2(np.max(hi / np.maximum(width, np.finfo(float).tiny)))))
        for _ in range(max(steps, 0)):
            mid = 0.5 * (lo + hi)
            f_mid = self._cdf_rows(laws, mid) - target
            left = f_mid < 0.0
            lo = np.where(left, mid, lo)
            f_lo = np.where(left, f_mid, f_lo)
            hi = np.where(left, hi, mid)
            f_hi = np.where(left, f_hi, f_mid)
            if np.all(hi - lo <= width):
                break

        use_lo = -f_lo < f_hi
        best = np.where(use_lo, lo, hi)
        best_f = np.where(use_lo, f_lo, f_hi)
        side = np.zeros(solve.size, dtype=np.int8)
        pending = np.flatnonzero(np.abs(best_f) > ROOT_TOL)
        for _ in range(60):
            if pending.size == 0:
                break
            span = f_hi[pending] - f_lo[pending]
            secant = lo[pending] - f_lo[pending] * (hi[pending] - lo[pending]) / np.where(span > 0.0, span, 1.0)
            guess = np.where(span > 0.0, secant, 0.5 * (lo[pending] + hi[pending]))
            guess = np.clip(guess, lo[pending], hi[pending])
            f_guess = self._cdf_rows(laws[pending], guess) - target[pending]
            best[pending] = guess
            best_f[pending] = f_guess
            left = f_guess < 0.0
            li, ri = pending[left], pending[~left]
            # Illinois：同侧连续更新时把另一端的函数值减半
            f_hi[li[side[li] == -1]] *= 0.5
            f_lo[ri[side[ri] == 1]] *= 0.5
            lo[li], f_lo[li], side[li] = guess[left], f_guess[left], -1
            hi[ri], f_hi[ri], side[ri] = guess[~left], f_guess[~left], 1
            pending = pending[np.abs(f_guess) > ROOT_TOL]
        if pending.size:
            logger.warning(f"{pending.size} 个积分方差分位数的割线迭代未达到容限 {ROOT_TOL}")

        result[solve] = best
        return result.reshape(shape)[()]


def iv_char_fn(law: IntegratedVarianceLaw, a):
    """积分方差的条件特征函数 Φ(a)"""
    return law.char_fn(a)


def iv_cdf(law: IntegratedVarianceLaw, x):
    """积分方差的条件CDF（截断的梯形公式，裁剪到[0,1]）"""
    return law.cdf(x)


def iv_quantile(law: IntegratedVarianceLaw, p):
    """积分方差的条件分位数"""
    return law.quantile(p)


def iv_moments(law: IntegratedVarianceLaw) -> Tuple[np.ndarray, np.ndarray]:
    """积分方差的前两阶原点矩 (m₁, m₂)"""
    return law.m1.reshape(law.shape)[()], law.m2.reshape(law.shape)[()]


def sample_integrated_variance(params: HestonParams, dt: float, v_start, v_end, p,
                               chunk: int = LAW_CHUNK) -> np.ndarray:
    """分块构造积分方差分布并求分位数

    Args:
        params: 模型参数
        dt: 区间长度
        v_start, v_end: 端点方差（长度相同的一维数组）
        p: 概率（同长度）

    Returns:
        积分方差样本
    """
    v_start, v_end, p = (np.ravel(a) for a in np.broadcast_arrays(
        np.asarray(v_start, dtype=float), np.asarray(v_end, dtype=float), np.asarray(p, dtype=float)))
    out = np.empty(p.size)
    for start in range(0, p.size, chunk):
        part = slice(start, start + chunk)
        law = IntegratedVarianceLaw(params, dt, v_start[part], v_end[part])
        out[part] = law.quantile(p[part])
    return out


def recover_stoch_integral(params: HestonParams, v_start, v_end, iv, dt: float):
    """由方差SDE还原 ∫√V dW² = (V_t - V_u - κθΔt + κ∫V ds)/σ"""
    kappa = params.kappa
    return (np.asarray(v_end) - np.asarray(v_start) - kappa * params.theta * dt + kappa * np.asarray(iv)) / params.sigma


@dataclass(frozen=True)
class ConditionedLogPriceLaw:
    """给定 ∫V=y, ∫√V dW²=z 后 log(S_t/S_u) 的正态分布"""
    s_start: Any
    drift: Any
    variance: Any

    @classmethod
    def from_increments(cls, params: HestonParams, s_start, iv, z, dt: float,
                        rate: Optional[float] = None) -> 'ConditionedLogPriceLaw':
        """均值 r(t-u) - ½y + ρz，方差 (1-ρ²)y"""
        r = params.r if rate is None else rate
        iv = np.asarray(iv, dtype=float)
        if np.any(iv < 0.0):
            raise DomainError("积分方差不能为负")
        drift = r * dt - 0.5 * iv + params.rho * np.asarray(z, dtype=float)
        return cls(s_start=s_start, drift=drift, variance=(1.0 - params.rho ** 2) * iv)


def terminal_logprice_quantile(law: ConditionedLogPriceLaw, p):
    """S_t 的条件分位数 S_u·exp(μ + √var·Q_Z(p))"""
    return np.asarray(law.s_start) * np.exp(law.drift + np.sqrt(law.variance) * normal_quantile(p))


def black_scholes_call(s0, strike, r: float, tau: float, vol):
    """Black-Scholes欧式看涨期权价格，vol=0 时为 e^{-rτ}(S₀e^{rτ} - K)⁺"""
    s0 = np.asarray(s0, dtype=float)
    vol = np.asarray(vol, dtype=float)
    if np.any(s0 <= 0.0) or np.any(np.asarray(strike) <= 0.0) or tau < 0.0 or np.any(vol < 0.0):
        raise DomainError("Black-Scholes公式要求 S₀, K > 0，τ ≥ 0，vol ≥ 0")
    discount = math.exp(-r * tau)
    total = vol * math.sqrt(tau)
    live = total > 0.0
    safe = np.where(live, total, 1.0)
    with np.errstate(divide='ignore'):
        d1 = (np.log(s0 / strike) + r * tau) / safe + 0.5 * safe
    d2 = d1 - safe
    price = s0 * special.ndtr(d1) - strike * discount * special.ndtr(d2)
    intrinsic = discount * np.maximum(s0 / discount - strike, 0.0)
    return np.where(live, price, intrinsic)[()]


def black_scholes_put(s0, strike, r: float, tau: float, vol):
    """由看涨看跌平价得到的欧式看跌期权价格"""
    return black_scholes_call(s0, strike, r, tau, vol) - np.asarray(s0, dtype=float) + strike * math.exp(-r * tau)


class TerminalState(NamedTuple):
    """单步精确模拟得到的终端量"""
    v: np.ndarray
    iv: np.ndarray
    z: np.ndarray
    s: np.ndarray


def conditioning_draws(params: HestonParams, expiry: float, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """坐标 u[:,0] → V_T，u[:,1] → ∫V，返回 (V_T, ∫V, ∫√V dW²)"""
    v_end = variance_transition_quantile(params, params.v0, expiry, u[:, 0])
    iv = sample_integrated_variance(params, expiry, params.v0, v_end, u[:, 1])
    z = recover_stoch_integral(params, params.v0, v_end, iv, expiry)
    return v_end, iv, z


def exact_terminal(params: HestonParams, expiry: float, u: np.ndarray, rate: Optional[float] = None) -> TerminalState:
    """三维坐标的精确模拟：u[:,0] → V_T，u[:,1] → ∫V，u[:,2] → 终端正态

    Args:
        params: 模型参数
        expiry: 到期时间
        u: (n, 3) 均匀坐标
        rate: 价格漂移，默认 params.r（SVJ模型传入补偿后的漂移）

    Returns:
        TerminalState
    """
    u = np.atleast_2d(u)
    v_end, iv, z = conditioning_draws(params, expiry, u)
    law = ConditionedLogPriceLaw.from_increments(params, params.s0, iv, z, expiry, rate)
    return TerminalState(v=v_end, iv=iv, z=z, s=terminal_logprice_quantile(law, u[:, 2]))


def conditional_european_call(params: HestonParams, strike: float, expiry: float, u: np.ndarray) -> np.ndarray:
    """条件Black-Scholes定价

    给定 ∫V 与 ∫√V dW²，价格为 BS(S̃₀, K, r, T, σ̃√(1-ρ²))，
    S̃₀ = S₀exp(-ρ²/2·∫V + ρ∫√V dW²)，σ̃ = √(∫V/T)。

    Args:
        params: 模型参数
        strike: 行权价
        expiry: 到期时间
        u: (n, 2) 均匀坐标

    Returns:
        每个点的贴现条件价格
    """
    u = np.atleast_2d(u)
    _, iv, z = conditioning_draws(params, expiry, u)
    rho = params.rho
    s_tilde = params.s0 * np.exp(-0.5 * rho ** 2 * iv + rho * z)
    vol = np.sqrt((1.0 - rho ** 2) * iv / expiry)
    return black_scholes_call(s_tilde, strike, params.r, expiry, vol)


def conditional_european_put(params: HestonParams, strike: float, expiry: float, u: np.ndarray) -> np.ndarray:
    """条件Black-Scholes看跌期权价格"""
    u = np.atleast_2d(u)
    _, iv, z = conditioning_draws(params, expiry, u)
    rho = params.rho
    s_tilde = params.s0 * np.exp(-0.5 * rho ** 2 * iv + rho * z)
    vol = np.sqrt((1.0 - rho ** 2) * iv / expiry)
    return black_scholes_put(s_tilde, strike, params.r, expiry, vol)
