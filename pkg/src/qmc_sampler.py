#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
随机化拟蒙特卡洛采样模块

生成以2为底的数字网（Sobol点集），施加Owen嵌套均匀置乱，
并提供RQMC与普通MC的估计量及标准误差计算。
"""

import os
import time
import logging
import concurrent.futures
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from errors import ConfigurationError, DomainError, EvaluationError

# 配置日志
logger = logging.getLogger('QMCSampler')

# 方向数的位数
DIGIT_BITS = 32
# scipy 自带 Joe-Kuo 方向数表的维数上限
MAX_DIMENSION = 21201
# 置乱后坐标的取值范围
LOWER_CLAMP = 2.0 ** -64
UPPER_CLAMP = 1.0 - 2.0 ** -53

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

Integrand = Callable[[np.ndarray], np.ndarray]


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 的输出混合函数（uint64 数组，按模 2^64 运算）"""
    x = np.asarray(x, dtype=np.uint64)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@lru_cache(maxsize=32)
def _scipy_direction_numbers(dimension: int, columns: int) -> np.ndarray:
    """从 scipy 的 Sobol 引擎中取出方向数

    Gray码顺序下第 2^(k+1)-1 个点恰好等于第k个方向数。
    """
    engine = qmc.Sobol(d=dimension, scramble=False, bits=DIGIT_BITS)
    table = np.zeros((dimension, DIGIT_BITS), dtype=np.uint64)
    for k in range(columns):
        engine.reset()
        engine.fast_forward(2 ** (k + 1) - 1)
        point = engine.random(1)[0]
        table[:, k] = np.round(point * 2.0 ** DIGIT_BITS).astype(np.uint64)
    table.setflags(write=False)
    return table


def load_joe_kuo(path: str, dimension: int) -> np.ndarray:
    """读取 Joe-Kuo 格式的方向数文件

    文件首行为表头，之后每行 "d s a m_1 ... m_s"。第1维不在文件中，
    其方向数全为1。

    Args:
        path: 文件路径
        dimension: 需要的维数

    Returns:
        形状为 (dimension, 32) 的方向数矩阵，第k列对应第k位
    """
    if not os.path.exists(path):
        raise ConfigurationError(f"方向数文件不存在: {path}", "direction_numbers")

    rows = []
    with open(path, 'r') as f:
        for line in f:
            parts = line.split()
            if not parts or not parts[0].isdigit():
                continue
            rows.append([int(v) for v in parts])
            if len(rows) >= dimension - 1:
                break
    if len(rows) < dimension - 1:
        raise ConfigurationError(
            f"方向数文件只有 {len(rows) + 1} 维，需要 {dimension} 维", "dimension")

    table = np.zeros((dimension, DIGIT_BITS), dtype=np.uint64)
    table[0] = [1 << (DIGIT_BITS - 1 - k) for k in range(DIGIT_BITS)]
    for j, row in enumerate(rows, start=1):
        s, a, m = row[1], row[2], row[3:3 + row[1]]
        v = [0] * (DIGIT_BITS + 1)
        for i in range(1, min(s, DIGIT_BITS) + 1):
            v[i] = m[i - 1] << (DIGIT_BITS - i)
        for i in range(s + 1, DIGIT_BITS + 1):
            v[i] = v[i - s] ^ (v[i - s] >> s)
            for k in range(1, s):
                v[i] ^= ((a >> (s - 1 - k)) & 1) * v[i - k]
        table[j] = v[1:]
    table.setflags(write=False)
    return table


@dataclass(frozen=True)
class DigitalNet:
    """以2为底的数字网

    direction_numbers[j, k] 是第j维第k个方向数（32位整数，最高位对应2^-1）。
    """
    dimension: int
    log2_count: int
    direction_numbers: np.ndarray = field(repr=False, compare=False)

    @property
    def count(self) -> int:
        return 1 << self.log2_count

    def integer_points(self) -> np.ndarray:
        """返回 (n, d) 的32位整数点，按Gray码顺序生成"""
        index = np.arange(self.count, dtype=np.uint64)
        gray = index ^ (index >> np.uint64(1))
        points = np.zeros((self.count, self.dimension), dtype=np.uint64)
        for k in range(self.log2_count):
            bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
            points[bit] ^= self.direction_numbers[:, k]
        return points

    def points(self) -> np.ndarray:
        """返回未置乱的点集，位于 [0,1)^d"""
        return self.integer_points().astype(float) * 2.0 ** -DIGIT_BITS


def generate_net(dimension: int, log2_count: int, direction_numbers: Optional[np.ndarray] = None) -> DigitalNet:
    """生成 2^m 个点的 d 维Sobol数字网

    Args:
        dimension: 维数 d ≥ 1
        log2_count: m，点数为 2^m
        direction_numbers: 可选的方向数矩阵（例如由 load_joe_kuo 读取）

    Returns:
        DigitalNet
    """
    if dimension < 1:
        raise ConfigurationError(f"维数必须为正: {dimension}", "dimension")
    if not 0 <= log2_count <= DIGIT_BITS:
        raise ConfigurationError(f"log2点数必须在[0, {DIGIT_BITS}]内: {log2_count}", "log2_count")

    if direction_numbers is None:
        if dimension > MAX_DIMENSION:
            raise ConfigurationError(f"维数 {dimension} 超出方向数表宽度 {MAX_DIMENSION}", "dimension")
        direction_numbers = _scipy_direction_numbers(dimension, log2_count)
    else:
        if direction_numbers.shape[0] < dimension:
            raise ConfigurationError(
                f"维数 {dimension} 超出方向数表宽度 {direction_numbers.shape[0]}", "dimension")
        direction_numbers = direction_numbers[:dimension]

    return DigitalNet(dimension=dimension, log2_count=log2_count, direction_numbers=direction_numbers)


@dataclass(frozen=True)
class ScrambleState:
    """Owen嵌套置乱的随机状态

    每个维度的置换树不显式存储：前缀为 (b_1..b_{k-1}) 的节点的第k位置换
    由 (seed, replicate, 维度, 节点编号) 的计数器哈希决定，因此同一状态
    重复作用于同一输入得到相同输出。identity=True 时所有置换为恒等。
    """
    seed: int
    replicate: int = 0
    digit_depth: int = DIGIT_BITS
    identity: bool = False

    def __post_init__(self):
        if not 1 <= self.digit_depth <= DIGIT_BITS:
            raise ConfigurationError(f"置乱位数必须在[1, {DIGIT_BITS}]内: {self.digit_depth}", "digit_depth")

    def dimension_keys(self, dimension: int) -> np.ndarray:
        words = _mix64(np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.replicate + 1], dtype=np.uint64) * _GOLDEN)
        base = _mix64(words[:1] ^ words[1:])
        dims = np.arange(1, dimension + 1, dtype=np.uint64)
        return _mix64(base + dims * _GOLDEN)


def scramble(net: DigitalNet, state: ScrambleState) -> np.ndarray:
    """对数字网施加Owen嵌套均匀置乱

    前 digit_depth 位逐位按前缀树翻转，更深的位用由完整前缀决定的
    均匀随机位填充。结果裁剪到 [2^-64, 1-2^-53]。

    Args:
        net: 数字网
        state: 置乱状态

    Returns:
        (n, d) 的点集
    """
    points = net.integer_points()
    if state.identity:
        return points.astype(float) * 2.0 ** -DIGIT_BITS

    keys = state.dimension_keys(net.dimension)[None, :]
    depth = state.digit_depth
    scrambled = np.zeros_like(points)
    for k in range(depth):
        shift = np.uint64(DIGIT_BITS - 1 - k)
        bit = (points >> shift) & np.uint64(1)
        # 节点编号：前k位前缀加上层级标记位
        node = (points >> np.uint64(DIGIT_BITS - k)) | np.uint64(1 << k)
        flip = _mix64(keys ^ (node * _GOLDEN)) >> np.uint64(63)
        scrambled |= (bit ^ flip) << shift

    head = scrambled >> np.uint64(DIGIT_BITS - depth)
    node = (points >> np.uint64(DIGIT_BITS - depth)) | np.uint64(1 << depth)
    tail = _mix64(_mix64(keys ^ (node * _GOLDEN)) + _GOLDEN) >> np.uint64(11)
    values = (head.astype(float) + tail.astype(float) * 2.0 ** -53) * 2.0 ** -depth
    return np.clip(values, LOWER_CLAMP, UPPER_CLAMP)


@dataclass(frozen=True)
class EstimatorReport:
    """估计结果：点估计、各批次均值、标准误差与样本规模"""
    estimate: float
    replicate_means: np.ndarray = field(repr=False, compare=False)
    std_error: float
    n: int
    q: int
    method: str = "rqmc"

    @classmethod
    def from_replicates(cls, replicate_means: Sequence[float], n: int) -> 'EstimatorReport':
        """按批次均值计算 I = mean(I_r)，σ = sqrt(Σ(I_r-I)²/(q(q-1)))"""
        means = np.asarray(replicate_means, dtype=float)
        q = means.size
        estimate = float(np.mean(means))
        std_error = float(np.sqrt(np.sum((means - estimate) ** 2) / (q * (q - 1)))) if q > 1 else float('nan')
        return cls(estimate=estimate, replicate_means=means, std_error=std_error, n=n, q=q, method="rqmc")

    def to_dict(self) -> Dict[str, float]:
        return {"estimate": self.estimate, "std_error": self.std_error, "n": self.n, "q": self.q}


def _checked_values(values: np.ndarray, count: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[0] != count:
        raise EvaluationError(f"被积函数返回了 {values.shape[0]} 个值，期望 {count} 个", 0)
    bad = ~np.isfinite(values)
    if np.any(bad):
        index = int(np.flatnonzero(bad.reshape(count, -1).any(axis=1))[0])
        raise EvaluationError("被积函数返回了非有限值", index)
    return values


def _replicate_means(f: Integrand, net: DigitalNet, q: int, seed: int,
                     max_workers: Optional[int], digit_depth: int) -> List[np.ndarray]:
    def run(r: int) -> np.ndarray:
        start = time.time()
        points = scramble(net, ScrambleState(seed=seed, replicate=r, digit_depth=digit_depth))
        values = _checked_values(f(points), net.count)
        logger.debug(f"批次 {r} 完成，n={net.count}，耗时 {time.time() - start:.3f}秒")
        return values.mean(axis=0)

    if max_workers and max_workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
            return list(executor.map(run, range(q)))
    return [run(r) for r in range(q)]


def rqmc_estimate(f: Integrand, net: DigitalNet, q: int = 30, seed: int = 0,
                  max_workers: Optional[int] = None, digit_depth: int = DIGIT_BITS) -> EstimatorReport:
    """随机化QMC估计

    每个批次使用独立的置乱状态 (seed, r)，批次之间可并行计算。

    Args:
        f: 被积函数，输入 (n, d) 点集，返回长度为n的数组
        net: 数字网
        q: 批次数，至少为2
        seed: 随机种子
        max_workers: 并行线程数，None或1表示串行

    Returns:
        EstimatorReport
    """
    if q < 2:
        raise ConfigurationError(f"批次数至少为2: {q}", "q")
    means = _replicate_means(f, net, q, seed, max_workers, digit_depth)
    return EstimatorReport.from_replicates(means, net.count)


def rqmc_estimate_multi(f: Integrand, net: DigitalNet, labels: Sequence[str], q: int = 30, seed: int = 0,
                        max_workers: Optional[int] = None) -> Dict[str, EstimatorReport]:
    """同一组置乱点上同时估计多个量

    f 返回 (n, k) 数组，第j列对应 labels[j]。
    """
    if q < 2:
        raise ConfigurationError(f"批次数至少为2: {q}", "q")
    means = np.asarray(_replicate_means(f, net, q, seed, max_workers, DIGIT_BITS)).reshape(q, -1)
    if means.shape[1] != len(labels):
        raise EvaluationError(f"被积函数返回了 {means.shape[1]} 列，期望 {len(labels)} 列", 0)
    return {label: EstimatorReport.from_replicates(means[:, j], net.count) for j, label in enumerate(labels)}


def mc_estimate(f: Integrand, dimension: int, n: int, q: int = 30, seed: int = 0) -> EstimatorReport:
    """普通蒙特卡洛估计，共 q×n 个独立均匀点

    I = Σf/(qn)，σ = sqrt(Σ(f-I)²/(qn(qn-1)))。replicate_means 记录每 n 个点的批次均值。
    """
    if n < 1 or q < 1 or q * n < 2:
        raise DomainError(f"样本数不足: n={n}, q={q}")
    rng = np.random.default_rng(seed)
    batches = []
    for _ in range(q):
        points = np.clip(rng.random((n, dimension)), LOWER_CLAMP, UPPER_CLAMP)
        batches.append(_checked_values(f(points), n))
    values = np.concatenate(batches)
    total = values.size
    estimate = float(values.mean())
    std_error = float(np.sqrt(np.sum((values - estimate) ** 2) / (total * (total - 1))))
    means = np.array([b.mean() for b in batches])
    return EstimatorReport(estimate=estimate, replicate_means=means, std_error=std_error, n=n, q=q, method="mc")
