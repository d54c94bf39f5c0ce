#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验配置模块

JSON配置文件的加载、校验，以及模型参数对象的构造。
配置先取 DEFAULT_CONFIG，再用文件内容覆盖，最后校验为 ExperimentConfig。
"""

import os
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

from errors import ConfigurationError, DomainError
from heston_core import HestonParams
from bridge_paths import is_power_of_two
from svj_model import SvjParams
from sv_extensions import ConditionedEulerSampler, MultiAssetParams, ThreeHalvesParams

# 配置日志
logger = logging.getLogger('ExperimentConfig')

ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

MODELS = ("heston", "svj", "multiasset", "3over2")
SCHEMES = ("mc", "qmc", "bridge", "cond-qmc")
# 各模型支持的收益类型
MODEL_PAYOFFS = {
    "heston": ("european", "put", "parity", "discounted_spot", "asian", "barrier", "barrier_knockout"),
    "svj": ("european", "put", "parity", "discounted_spot", "asian"),
    "multiasset": ("european", "put", "discounted_spot", "basket"),
    "3over2": ("european", "put", "discounted_spot", "asian"),
}
# 条件QMC只用于Heston欧式期权
CONDITIONAL_PAYOFFS = ("european", "put")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

# 默认配置（第一组实验的参数）
DEFAULT_CONFIG = {
    "model": "heston",
    "payoff": "european",
    "schemes": ["mc", "qmc", "cond-qmc"],
    "params": {
        "s0": 100.0,
        "v0": 0.010201,
        "kappa": 6.21,
        "theta": 0.019,
        "sigma": 0.61,
        "rho": -0.70,
        "r": 0.0319,
    },
    "payoff_params": {
        "strike": 100.0,
        "expiry": 1.0,
        "dates": 1,  # 等距监测日期数
    },
    "n": [128, 256, 512, 1024, 2048, 4096, 8192, 16384],
    "q": 30,
    "seed": 12345,
    "max_workers": 3,  # 并行计算的实验行数
    "direction_numbers": None,  # Joe-Kuo格式的方向数文件，None表示使用scipy自带的表
    "output": os.path.join(ROOT_DIR, "results", "results.csv"),
    "log_level": "INFO",
    "log_file": os.path.join(ROOT_DIR, "logs", "hestonqmc.log"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """校验后的实验配置"""
    model: str
    payoff: str
    schemes: Tuple[str, ...]
    params: Dict[str, Any]
    payoff_params: Dict[str, Any]
    n: Tuple[int, ...]
    q: int = 30
    seed: int = 12345
    max_workers: int = 1
    direction_numbers: Optional[str] = None
    output: Optional[str] = None
    log_level: str = "INFO"
    log_file: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def strike(self) -> float:
        return float(self.payoff_params["strike"])

    @property
    def expiry(self) -> float:
        return float(self.payoff_params["expiry"])

    @property
    def date_count(self) -> int:
        return len(self.times())

    def times(self) -> List[float]:
        """监测日期：payoff_params.times 显式给出，否则为 dates 个等距日期"""
        if "times" in self.payoff_params:
            return [float(t) for t in self.payoff_params["times"]]
        h = int(self.payoff_params.get("dates", 1))
        return [self.expiry * (i + 1) / h for i in range(h)]

    def model_params(self) -> Union[HestonParams, SvjParams, MultiAssetParams, ThreeHalvesParams]:
        return build_model_params(self.model, self.params)

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "model": self.model, "payoff": self.payoff, "schemes": list(self.schemes),
            "params": self.params, "payoff_params": self.payoff_params, "n": list(self.n),
            "q": self.q, "seed": self.seed, "max_workers": self.max_workers,
            "direction_numbers": self.direction_numbers, "output": self.output,
            "log_level": self.log_level, "log_file": self.log_file,
        }
        out.update(self.extra)
        return out


def build_model_params(model: str, params: Dict[str, Any]):
    """按模型类型构造参数对象，缺失或非法的参数转为带字段路径的 ConfigurationError"""
    try:
        if model == "heston":
            return HestonParams.from_dict(params)
        if model == "svj":
            return SvjParams.from_dict(params)
        if model == "multiasset":
            return MultiAssetParams.from_dict(params)
        lowered = {k.lower(): v for k, v in params.items()}
        return ThreeHalvesParams(**{name: float(lowered[name]) for name in
                                    ("s0", "v0", "kappa", "theta", "epsilon", "rho", "r")})
    except KeyError as e:
        raise ConfigurationError(f"缺少参数 {e.args[0]}", f"params.{e.args[0]}") from e
    except (DomainError, TypeError, ValueError) as e:
        if isinstance(e, ConfigurationError):
            raise
        raise ConfigurationError(str(e), "params") from e


def threehalves_sampler(params: Dict[str, Any]) -> ConditionedEulerSampler:
    """3/2 模型的积分采样器，目前只有 "euler" 一种"""
    kind = params.get("iv_sampler")
    if kind != "euler":
        raise ConfigurationError(f"3/2 模型需要 iv_sampler=\"euler\"，收到 {kind!r}", "params.iv_sampler")
    return ConditionedEulerSampler(steps=int(params.get("euler_steps", 200)), seed=int(params.get("euler_seed", 0)))


def _positive_number(value: Any, name: str) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"必须是数值，收到 {value!r}", name)
    if not number > 0.0:
        raise ConfigurationError(f"必须为正，收到 {value!r}", name)
    return number


def validate_config(raw: Dict[str, Any]) -> ExperimentConfig:
    """校验配置字典

    Raises:
        ConfigurationError: 第一个非法字段，field 为点分路径
    """
    model = raw.get("model")
    if model not in MODELS:
        raise ConfigurationError(f"未知的模型 {model!r}，可选 {', '.join(MODELS)}", "model")
    payoff = raw.get("payoff")
    if payoff not in MODEL_PAYOFFS[model]:
        raise ConfigurationError(f"模型 {model} 不支持收益 {payoff!r}", "payoff")

    schemes = raw.get("schemes")
    if isinstance(schemes, str):
        schemes = [schemes]
    if not schemes:
        raise ConfigurationError("至少需要一个方案", "schemes")
    for i, scheme in enumerate(schemes):
        if scheme not in SCHEMES:
            raise ConfigurationError(f"未知的方案 {scheme!r}", f"schemes[{i}]")
        if scheme == "cond-qmc" and (model != "heston" or payoff not in CONDITIONAL_PAYOFFS):
            raise ConfigurationError("cond-qmc 只适用于Heston模型的欧式期权", f"schemes[{i}]")
    if len(set(schemes)) != len(schemes):
        raise ConfigurationError("方案不能重复", "schemes")

    params = raw.get("params")
    if not isinstance(params, dict):
        raise ConfigurationError("必须是对象", "params")
    payoff_params = dict(raw.get("payoff_params") or {})
    payoff_params["strike"] = _positive_number(payoff_params.get("strike"), "payoff_params.strike")
    payoff_params["expiry"] = _positive_number(payoff_params.get("expiry"), "payoff_params.expiry")

    sizes = raw.get("n")
    if isinstance(sizes, int):
        sizes = [sizes]
    if not sizes:
        raise ConfigurationError("至少需要一个样本规模", "n")
    for i, size in enumerate(sizes):
        if not isinstance(size, int) or isinstance(size, bool) or not is_power_of_two(size):
            raise ConfigurationError(f"样本规模必须是2的幂，收到 {size!r}", f"n[{i}]")

    q = raw.get("q")
    if not isinstance(q, int) or q < 2:
        raise ConfigurationError(f"批次数必须是不小于2的整数，收到 {q!r}", "q")
    seed = raw.get("seed")
    if not isinstance(seed, int) or seed < 0:
        raise ConfigurationError(f"种子必须是非负整数，收到 {seed!r}", "seed")
    max_workers = raw.get("max_workers") or 1
    if not isinstance(max_workers, int) or max_workers < 1:
        raise ConfigurationError(f"线程数必须是正整数，收到 {max_workers!r}", "max_workers")
    log_level = str(raw.get("log_level", "INFO")).upper()
    if log_level not in LOG_LEVELS:
        raise ConfigurationError(f"未知的日志级别 {log_level}", "log_level")

    known = set(DEFAULT_CONFIG) | {"payoff_params"}
    config = ExperimentConfig(
        model=model, payoff=payoff, schemes=tuple(schemes), params=dict(params),
        payoff_params=payoff_params, n=tuple(sizes), q=q, seed=seed, max_workers=max_workers,
        direction_numbers=raw.get("direction_numbers"), output=raw.get("output"),
        log_level=log_level, log_file=raw.get("log_file"),
        extra={k: v for k, v in raw.items() if k not in known},
    )

    times = config.times()
    if not times or any(t <= 0.0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigurationError("监测日期必须为正且严格递增", "payoff_params.times")
    if abs(times[-1] - config.expiry) > 1e-12:
        raise ConfigurationError("最后一个监测日期必须等于到期时间", "payoff_params.times")
    if "bridge" in config.schemes and not is_power_of_two(len(times)):
        raise ConfigurationError(f"bridge方案要求日期数为2的幂，收到 {len(times)}", "payoff_params.dates")
    if payoff in ("barrier", "barrier_knockout"):
        barrier = _positive_number(payoff_params.get("barrier"), "payoff_params.barrier")
        if barrier >= float(params.get("s0", params.get("S0", 0.0))):
            raise ConfigurationError("障碍必须低于初始价格", "payoff_params.barrier")

    config.model_params()
    if model == "3over2":
        threehalves_sampler(config.params)
    return config


def load_config(config_file: Optional[str]) -> ExperimentConfig:
    """加载配置文件

    Args:
        config_file: 配置文件路径，None 时只使用默认配置

    Returns:
        ExperimentConfig

    Raises:
        ConfigurationError: 文件不存在、JSON格式错误或校验失败
    """
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    if config_file:
        if not os.path.exists(config_file):
            raise ConfigurationError(f"配置文件不存在: {config_file}", "config")
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                loaded_config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"JSON格式错误: {e}", "config") from e
        if not isinstance(loaded_config, dict):
            raise ConfigurationError("配置文件顶层必须是对象", "config")

        # 嵌套对象整体替换，避免不同模型的参数混在一起
        config.update(loaded_config)
        logger.info(f"已加载配置文件: {config_file}")
    return validate_config(config)


def save_config(config: ExperimentConfig, config_file: str):
    """保存配置文件"""
    os.makedirs(os.path.dirname(os.path.abspath(config_file)), exist_ok=True)
    with open(config_file, 'w', encoding='utf-8') as f:
        json.dump(config.to_dict(), f, indent=2, ensure_ascii=False)
    logger.info(f"已保存配置文件: {config_file}")
