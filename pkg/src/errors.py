#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常定义模块

定价引擎中各模块共用的异常类型
"""

from typing import Any, Dict, Optional


class HestonQMCError(Exception):
    """定价引擎异常基类"""


class ConfigurationError(HestonQMCError, ValueError):
    """配置错误（维度越界、日期数不是2的幂、实验配置非法等）

    Args:
        message: 错误描述
        field: 出错字段的点分路径，例如 "params.kappa"
    """

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class DomainError(HestonQMCError, ValueError):
    """参数超出定义域（概率不在(0,1)内、负参数等）"""


class NumericalError(HestonQMCError, ArithmeticError):
    """数值计算失败，附带诊断信息"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)


class InversionError(NumericalError):
    """特征函数反演失败（截断项数超限或找不到区间）"""


class NormalizationError(NumericalError):
    """Bessel分布概率质量归一化检查失败"""


class BesselRangeError(NumericalError, OverflowError):
    """未缩放的Bessel函数值溢出，应改用 log_scaled=True"""


class EvaluationError(HestonQMCError):
    """被积函数返回了非有限值

    Args:
        message: 错误描述
        index: 第一个出错点在点集中的下标
    """

    def __init__(self, message: str, index: int):
        self.index = index
        super().__init__(f"{message} (point index {index})")


class UnsupportedOperationError(HestonQMCError, NotImplementedError):
    """模型缺少必要的组件（例如3/2模型未提供积分方差采样器）"""
