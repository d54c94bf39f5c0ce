#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
HestonQMC - 随机波动率模型RQMC定价命令行工具

  price  按配置文件对每个 (方案, 样本规模) 组合定价，输出CSV
  verify 用期望文件检查结果CSV

退出码：0 正常，1 用法或配置错误，2 数值失败，3 验证失败
"""

import os
import sys
import json
import math
import time
import logging
import argparse
import concurrent.futures
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

# 添加当前目录到模块搜索路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

# 导入自定义模块
from errors import ConfigurationError, HestonQMCError
from experiment_config import ExperimentConfig, load_config, threehalves_sampler, validate_config
from heston_core import conditional_european_call, conditional_european_put
from bridge_paths import PathGrid, build_path, path_dimension
from svj_model import build_svj_path, svj_dimension
from sv_extensions import multiasset_dimension, multiasset_path, threehalves_path_skeleton
from payoffs import (AsianSpec, BarrierSpec, asian_payoff, barrier_dimension, barrier_price_knockout,
                     barrier_price_onestep_survival, discounted_spot, european_call_payoff,
                     european_put_payoff)
from qmc_sampler import EstimatorReport, generate_net, load_joe_kuo, mc_estimate, rqmc_estimate

logger = logging.getLogger('HestonQMC')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3

RESULT_COLUMNS = ["scheme", "n", "q", "estimate", "std_error", "wall_ms"]
REPLICATE_COLUMNS = ["scheme", "n", "replicate", "mean"]


class PricingProblem(NamedTuple):
    """QMC维数与被积函数"""
    dimension: int
    integrand: Callable[[np.ndarray], np.ndarray]


@dataclass
class RunResult:
    """一次实验的结果表、批次均值表与失败的行"""
    table: pd.DataFrame
    replicates: pd.DataFrame
    failures: List[Tuple[str, int, str]] = field(default_factory=list)


@dataclass
class VerificationReport:
    """验证结果"""
    checked: int
    failures: List[str]

    @property
    def passed(self) -> bool:
        return not self.failures


def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
    """配置根日志：控制台 + 文件"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _path_layout(scheme: str) -> str:
    return "bridge" if scheme == "bridge" else "naive"


def _terminal_payoff(kind: str, strike: float, expiry: float, s0: float, r: float) -> Callable[[np.ndarray], np.ndarray]:
    if kind == "european":
        return lambda s: european_call_payoff(s, strike, r, expiry)
    if kind == "put":
        return lambda s: european_put_payoff(s, strike, r, expiry)
    if kind == "parity":
        forward_gap = s0 - strike * math.exp(-r * expiry)
        return lambda s: european_call_payoff(s, strike, r, expiry) - european_put_payoff(s, strike, r, expiry) - forward_gap
    return lambda s: discounted_spot(s, r, expiry)


def build_problem(config: ExperimentConfig, scheme: str) -> PricingProblem:
    """把 (模型, 收益, 方案) 组合成QMC被积函数

    mc 与 qmc 使用按时间顺序的坐标布局，bridge 使用桥接布局，
    cond-qmc 使用二维条件Black-Scholes被积函数。
    """
    params = config.model_params()
    strike, expiry = config.strike, config.expiry
    times = np.asarray(config.times())
    h = times.size
    layout = _path_layout(scheme)
    payoff = config.payoff

    if scheme == "cond-qmc":
        price = conditional_european_call if payoff == "european" else conditional_european_put
        return PricingProblem(2, lambda u: price(params, strike, expiry, u))

    if config.model == "multiasset":
        correlated = bool(config.extra.get("correlated", True))
        if payoff == "basket":
            def basket(u):
                first, second = multiasset_path(params, times, layout, u, correlated)
                top = np.maximum(first.s, second.s).mean(axis=1)
                return european_call_payoff(top, strike, params.r, expiry)
            return PricingProblem(multiasset_dimension(h, layout), basket)
        asset = int(config.extra.get("asset", 1))
        if asset not in (1, 2):
            raise ConfigurationError(f"资产编号必须是1或2，收到 {asset}", "asset")
        terminal = _terminal_payoff(payoff, strike, expiry, params.s0[asset - 1], params.r)
        return PricingProblem(multiasset_dimension(h, layout),
                              lambda u: terminal(multiasset_path(params, times, layout, u, correlated)[asset - 1].s[:, -1]))

    if payoff in ("barrier", "barrier_knockout"):
        spec = BarrierSpec(float(config.payoff_params["barrier"]), strike, expiry)
        price = barrier_price_onestep_survival if payoff == "barrier" else barrier_price_knockout
        return PricingProblem(barrier_dimension(h, layout), lambda u: price(params, spec, times, u, layout))

    if config.model == "heston":
        dimension = path_dimension(h, layout)
        simulate: Callable[[np.ndarray], PathGrid] = lambda u: build_path(params, times, layout, u)
        s0, r = params.s0, params.r
    elif config.model == "svj":
        dimension = svj_dimension(h, layout)
        simulate = lambda u: build_svj_path(params, times, layout, u)[0]
        s0, r = params.heston.s0, params.heston.r
    else:
        sampler = threehalves_sampler(config.params)
        dimension = path_dimension(h, layout)
        simulate = lambda u: threehalves_path_skeleton(params, times, layout, u, sampler)
        s0, r = params.s0, params.r

    if payoff == "asian":
        spec = AsianSpec(strike, expiry)
        return PricingProblem(dimension, lambda u: asian_payoff(simulate(u), spec))
    terminal = _terminal_payoff(payoff, strike, expiry, s0, r)
    return PricingProblem(dimension, lambda u: terminal(simulate(u).s[:, -1]))


class ExperimentRunner:
    """按 (方案, 样本规模) 运行实验，各行在线程池中并行，输出按 (scheme, n) 排序"""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.failures: List[Tuple[str, int, str]] = []
        logger.info(f"实验: model={config.model}, payoff={config.payoff}, schemes={','.join(config.schemes)}, "
                    f"n={list(config.n)}, q={config.q}, seed={config.seed}")

    def _estimate(self, scheme: str, n: int) -> EstimatorReport:
        problem = build_problem(self.config, scheme)
        if scheme == "mc":
            return mc_estimate(problem.integrand, problem.dimension, n, self.config.q, self.config.seed)
        directions = None
        if self.config.direction_numbers:
            directions = load_joe_kuo(self.config.direction_numbers, problem.dimension)
        net = generate_net(problem.dimension, int(math.log2(n)), directions)
        return rqmc_estimate(problem.integrand, net, self.config.q, self.config.seed)

    def _run_row(self, scheme: str, n: int) -> Tuple[Dict[str, Any], Optional[EstimatorReport]]:
        start_time = time.time()
        report = None
        try:
            report = self._estimate(scheme, n)
            estimate, std_error = report.estimate, report.std_error
            logger.info(f"{scheme} n={n}: {estimate:.6f} ({std_error:.6f})")
        except (HestonQMCError, ArithmeticError, ValueError) as e:
            logger.error(f"{scheme} n={n} 计算失败: {type(e).__name__}: {e}")
            self.failures.append((scheme, n, str(e)))
            estimate = std_error = float('nan')
        row = {"scheme": scheme, "n": n, "q": self.config.q, "estimate": estimate,
               "std_error": std_error, "wall_ms": (time.time() - start_time) * 1000.0}
        return row, report

    def run(self) -> RunResult:
        tasks = [(scheme, n) for scheme in self.config.schemes for n in self.config.n]
        rows, replicates = [], []

        if self.config.max_workers > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
                futures = [executor.submit(self._run_row, scheme, n) for scheme, n in tasks]
                outcomes = [future.result() for future in concurrent.futures.as_completed(futures)]
        else:
            outcomes = [self._run_row(scheme, n) for scheme, n in tasks]

        for row, report in outcomes:
            rows.append(row)
            if report is not None:
                replicates.extend({"scheme": row["scheme"], "n": row["n"], "replicate": r, "mean": float(m)}
                                  for r, m in enumerate(report.replicate_means))

        table = pd.DataFrame(rows, columns=RESULT_COLUMNS).sort_values(["scheme", "n"]).reset_index(drop=True)
        replicate_table = pd.DataFrame(replicates, columns=REPLICATE_COLUMNS)
        if not replicate_table.empty:
            replicate_table = replicate_table.sort_values(["scheme", "n", "replicate"]).reset_index(drop=True)
        self.failures.sort()
        return RunResult(table=table, replicates=replicate_table, failures=list(self.failures))


def run_experiment(config: ExperimentConfig) -> RunResult:
    return ExperimentRunner(config).run()


def replicate_path(out: str) -> str:
    stem, ext = os.path.splitext(out)
    return f"{stem}_replicates{ext or '.csv'}"


def write_results(result: RunResult, out: str, emit_replicates: bool = False):
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    result.table.to_csv(out, index=False)
    logger.info(f"结果已写入: {out}")
    if emit_replicates:
        result.replicates.to_csv(replicate_path(out), index=False)
        logger.info(f"批次均值已写入: {replicate_path(out)}")


def read_results(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise ConfigurationError(f"结果文件不存在: {path}", "results")
    table = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in RESULT_COLUMNS if c not in table.columns]
    if missing:
        raise ConfigurationError(f"结果文件缺少列: {', '.join(missing)}", "results")
    return table


def golden_expectations(table: pd.DataFrame) -> Dict[str, Any]:
    """由结果表生成逐位匹配的期望文件内容"""
    return {"expectations": [
        {"type": "match", "scheme": row.scheme, "n": int(row.n),
         "estimate": float(row.estimate), "std_error": float(row.std_error)}
        for row in table.itertuples(index=False)
    ]}


def _lookup(table: pd.DataFrame, scheme: str, n: int) -> Optional[pd.Series]:
    rows = table[(table["scheme"] == scheme) & (table["n"] == int(n))]
    if rows.empty:
        return None
    return rows.iloc[0]


def verify_goldens(results: Union[pd.DataFrame, str], expectations: Union[Dict[str, Any], str]) -> VerificationReport:
    """检查结果表

    期望类型：
      reference       |estimate - reference| ≤ k·sqrt(std_error² + reference_std_error²)
      std_error_ratio std_error(numerator)/std_error(denominator) 位于 [min, max] 内
      std_error_max   std_error ≤ max
      match           estimate 与 std_error 逐位相同
    """
    table = read_results(results) if isinstance(results, str) else results
    if isinstance(expectations, str):
        if not os.path.exists(expectations):
            raise ConfigurationError(f"期望文件不存在: {expectations}", "expect")
        with open(expectations, 'r', encoding='utf-8') as f:
            try:
                expectations = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"JSON格式错误: {e}", "expect") from e
    items = expectations.get("expectations", []) if isinstance(expectations, dict) else expectations

    failures = []
    for i, item in enumerate(items):
        kind = item.get("type")
        label = f"expectations[{i}] ({kind})"
        if kind == "std_error_ratio":
            top = _lookup(table, item["numerator"]["scheme"], item["numerator"]["n"])
            bottom = _lookup(table, item["denominator"]["scheme"], item["denominator"]["n"])
            if top is None or bottom is None:
                failures.append(f"{label}: 结果中缺少对应的行")
                continue
            ratio = top["std_error"] / bottom["std_error"]
            low, high = float(item.get("min", 0.0)), float(item.get("max", math.inf))
            if not low <= ratio <= high:
                failures.append(f"{label}: 标准误差比 {ratio:.4g} 不在 [{low}, {high}] 内")
            continue

        row = _lookup(table, item.get("scheme"), item.get("n", -1))
        if row is None:
            failures.append(f"{label}: 结果中缺少 {item.get('scheme')} n={item.get('n')}")
            continue
        if not (np.isfinite(row["estimate"]) and np.isfinite(row["std_error"])):
            failures.append(f"{label}: {row['scheme']} n={row['n']} 计算失败")
            continue
        if kind == "reference":
            k = float(item.get("k", 3.0))
            combined = math.hypot(row["std_error"], float(item.get("reference_std_error", 0.0)))
            gap = abs(row["estimate"] - float(item["reference"]))
            if gap > k * combined:
                failures.append(f"{label}: |{row['estimate']:.6f} - {item['reference']}| = {gap:.3g} > {k}×{combined:.3g}")
        elif kind == "std_error_max":
            if row["std_error"] > float(item["max"]):
                failures.append(f"{label}: 标准误差 {row['std_error']:.4g} > {item['max']}")
        elif kind == "match":
            if row["estimate"] != float(item["estimate"]) or row["std_error"] != float(item["std_error"]):
                failures.append(f"{label}: {row['scheme']} n={row['n']} 与期望值不一致")
        else:
            raise ConfigurationError(f"未知的期望类型 {kind!r}", f"expectations[{i}].type")

    for failure in failures:
        logger.error(f"验证失败: {failure}")
    logger.info(f"验证完成: 检查 {len(items)} 项，失败 {len(failures)} 项")
    return VerificationReport(checked=len(items), failures=failures)


class _Parser(argparse.ArgumentParser):
    """用法错误以 ConfigurationError 报告，统一映射为退出码1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message, "argv")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="详细日志输出")

    parser = _Parser(description="HestonQMC - 随机波动率模型RQMC定价工具")
    parser.add_argument("--version", action="version", version="HestonQMC v1.0.0")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    price = commands.add_parser("price", parents=[common], help="按配置文件定价")
    price.add_argument("-c", "--config", required=True, help="配置文件路径")
    price.add_argument("--seed", type=int, help="覆盖配置中的随机种子")
    price.add_argument("--out", help="结果CSV路径")
    price.add_argument("--emit-replicates", action="store_true", help="同时输出每个批次的均值")

    verify = commands.add_parser("verify", parents=[common], help="用期望文件检查结果")
    verify.add_argument("--results", required=True, help="结果CSV路径")
    verify.add_argument("--expect", required=True, help="期望文件路径")
    return parser


def _price(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["output"] = args.out
    if args.verbose:
        overrides["log_level"] = "DEBUG"
    if overrides:
        config = validate_config({**config.to_dict(), **overrides})
    setup_logging(config.log_level, config.log_file)

    result = run_experiment(config)
    out = config.output or "results.csv"
    write_results(result, out, args.emit_replicates)
    print(result.table.to_string(index=False))
    if result.failures:
        logger.error(f"{len(result.failures)} 行计算失败")
        return EXIT_NUMERICAL
    return EXIT_OK


def _verify(args) -> int:
    setup_logging("DEBUG" if args.verbose else "INFO")
    report = verify_goldens(args.results, args.expect)
    if report.passed:
        print(f"验证通过: {report.checked} 项")
        return EXIT_OK
    for failure in report.failures:
        print(f"失败: {failure}")
    return EXIT_VERIFY


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数，返回退出码"""
    try:
        args = _build_parser().parse_args(argv)
        if args.command == "price":
            return _price(args)
        if args.command == "verify":
            return _verify(args)
        raise ConfigurationError("需要子命令 price 或 verify", "command")
    except ConfigurationError as e:
        logger.error(f"配置错误: {e}")
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_USAGE
    except HestonQMCError as e:
        logger.error(f"运行时出错: {e}")
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
