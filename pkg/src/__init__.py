#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
HestonQMC - 随机波动率模型的RQMC精确模拟定价引擎

版本: 1.0.0
作者: HestonQMC开发团队
"""

__version__ = '1.0.0'
