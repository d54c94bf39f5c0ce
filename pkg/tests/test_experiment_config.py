#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""实验配置的加载与校验"""

import copy
import json
import os

import pytest

from errors import ConfigurationError
from experiment_config import (DEFAULT_CONFIG, ExperimentConfig, build_model_params, load_config, save_config,
                               threehalves_sampler, validate_config)
from heston_core import HestonParams
from svj_model import SvjParams
from sv_extensions import ConditionedEulerSampler, MultiAssetParams, ThreeHalvesParams

BUNDLED = ["hestonqmc.json", "smoke.json", "heston_european.json", "heston_asian.json",
           "svj_asian.json"]


def raw_config(**changes):
    config = copy.deepcopy(DEFAULT_CONFIG)
    config.update(changes)
    return config


def field_of(raw):
    with pytest.raises(ConfigurationError) as info:
        validate_config(raw)
    return info.value.field


def test_default_config_is_valid():
    config = load_config(None)
    assert isinstance(config, ExperimentConfig)
    assert config.schemes == ("mc", "qmc", "cond-qmc")
    assert config.times() == [1.0]
    assert isinstance(config.model_params(), HestonParams)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_configs_load(root_dir, name):
    config = load_config(os.path.join(root_dir, "config", name))
    assert config.schemes
    assert all(n & (n - 1) == 0 for n in config.n)


def test_experiment_configs(root_dir):
    asian = load_config(os.path.join(root_dir, "config", "heston_asian.json"))
    assert asian.date_count == 64
    assert asian.times()[0] == pytest.approx(1.0 / 64)
    svj = load_config(os.path.join(root_dir, "config", "svj_asian.json"))
    params = svj.model_params()
    assert isinstance(params, SvjParams)
    assert params.log_jump_mean == pytest.approx(-0.1391)


@pytest.mark.parametrize("name", ["heston_european", "heston_asian", "svj_asian"])
def test_expectations_refer_to_configured_rows(root_dir, name):
    config = load_config(os.path.join(root_dir, "config", f"{name}.json"))
    with open(os.path.join(root_dir, "config", "expectations", f"{name}.json"), encoding="utf-8") as f:
        items = json.load(f)["expectations"]
    grid = {(scheme, n) for scheme in config.schemes for n in config.n}
    for item in items:
        refs = [item["numerator"], item["denominator"]] if item["type"] == "std_error_ratio" else [item]
        assert {(ref["scheme"], ref["n"]) for ref in refs} <= grid


def test_european_ordering_checked_at_every_size(root_dir):
    config = load_config(os.path.join(root_dir, "config", "heston_european.json"))
    with open(os.path.join(root_dir, "config", "expectations", "heston_european.json"), encoding="utf-8") as f:
        items = json.load(f)["expectations"]
    pairs = {(item["numerator"]["scheme"], item["denominator"]["scheme"], item["numerator"]["n"])
             for item in items if item["type"] == "std_error_ratio" and item.get("max") == 1.0}
    for n in config.n:
        assert ("cond-qmc", "qmc", n) in pairs and ("qmc", "mc", n) in pairs


@pytest.mark.parametrize("changes,field", [
    ({"model": "bates"}, "model"),
    ({"payoff": "basket"}, "payoff"),
    ({"schemes": ["mc", "sobol"]}, "schemes[1]"),
    ({"schemes": []}, "schemes"),
    ({"schemes": ["mc", "mc"]}, "schemes"),
    ({"n": [128, 100]}, "n[1]"),
    ({"n": [True]}, "n[0]"),
    ({"q": 1}, "q"),
    ({"seed": -3}, "seed"),
    ({"max_workers": 0.5}, "max_workers"),
    ({"log_level": "chatty"}, "log_level"),
    ({"params": [1, 2]}, "params"),
    ({"payoff_params": {"strike": -1.0, "expiry": 1.0}}, "payoff_params.strike"),
    ({"payoff_params": {"strike": 100.0, "expiry": "soon"}}, "payoff_params.expiry"),
    ({"payoff_params": {"strike": 100.0, "expiry": 1.0, "times": [0.5, 0.9]}}, "payoff_params.times"),
    ({"payoff_params": {"strike": 100.0, "expiry": 1.0, "times": [0.5, 0.4, 1.0]}}, "payoff_params.times"),
])
def test_invalid_fields_are_named(changes, field):
    assert field_of(raw_config(**changes)) == field


def test_conditional_scheme_only_for_heston_european():
    raw = raw_config(payoff="asian", schemes=["qmc", "cond-qmc"])
    raw["payoff_params"] = {"strike": 100.0, "expiry": 1.0, "dates": 4}
    assert field_of(raw) == "schemes[1]"


def test_bridge_needs_power_of_two_dates():
    raw = raw_config(payoff="asian", schemes=["bridge"])
    raw["payoff_params"] = {"strike": 100.0, "expiry": 1.0, "dates": 3}
    assert field_of(raw) == "payoff_params.dates"
    raw["schemes"] = ["qmc"]
    assert validate_config(raw).date_count == 3


def test_barrier_level_checked():
    raw = raw_config(payoff="barrier", schemes=["qmc"])
    raw["payoff_params"] = {"strike": 100.0, "expiry": 1.0, "dates": 4, "barrier": 105.0}
    assert field_of(raw) == "payoff_params.barrier"
    raw["payoff_params"]["barrier"] = 90.0
    assert validate_config(raw).payoff_params["barrier"] == 90.0


def test_missing_model_parameter_names_key():
    raw = raw_config()
    del raw["params"]["kappa"]
    assert field_of(raw) == "params.kappa"
    raw = raw_config()
    raw["params"]["sigma"] = -0.5
    assert field_of(raw) == "params"


def test_model_parameter_objects():
    multi = {"s0": [100.0, 100.0], "r": 0.0,
             "factors": [{"kappa": 1.0, "theta": 0.04, "sigma": 0.3, "rho": -0.5, "v0": 0.04}] * 3}
    assert isinstance(build_model_params("multiasset", multi), MultiAssetParams)
    three = {"s0": 100.0, "v0": 0.04, "kappa": 20.0, "theta": 0.04, "epsilon": 1.0, "rho": 0.0, "r": 0.0}
    assert isinstance(build_model_params("3over2", three), ThreeHalvesParams)


def test_threehalves_needs_sampler():
    params = {"s0": 100.0, "v0": 0.04, "kappa": 20.0, "theta": 0.04, "epsilon": 1.0, "rho": 0.0, "r": 0.0}
    raw = raw_config(model="3over2", schemes=["qmc"], params=dict(params))
    assert field_of(raw) == "params.iv_sampler"
    raw["params"]["iv_sampler"] = "euler"
    raw["params"]["euler_steps"] = 30
    config = validate_config(raw)
    sampler = threehalves_sampler(config.params)
    assert isinstance(sampler, ConditionedEulerSampler) and sampler.steps == 30


def test_extra_keys_are_kept():
    config = validate_config(raw_config(correlated=False))
    assert config.extra == {"correlated": False}
    assert config.to_dict()["correlated"] is False


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigurationError) as info:
        load_config(str(tmp_path / "missing.json"))
    assert info.value.field == "config"
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigurationError) as info:
        load_config(str(broken))
    assert info.value.field == "config"
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        load_config(str(listing))


def test_nested_objects_replaced_wholesale(tmp_path):
    path = tmp_path / "svj.json"
    params = {"s0": 100.0, "v0": 0.010201, "kappa": 6.21, "theta": 0.019, "sigma": 0.61, "rho": -0.7,
              "r": 0.0319, "lambda": 0.11, "mu_s": -0.1391, "sigma_s": 0.15}
    path.write_text(json.dumps({"model": "svj", "payoff": "asian", "schemes": ["qmc"], "params": params,
                                "payoff_params": {"strike": 100.0, "expiry": 1.0, "dates": 16}}))
    config = load_config(str(path))
    assert config.params == params
    assert config.date_count == 16


def test_save_and_reload(tmp_path):
    config = validate_config(raw_config(seed=99, n=[256]))
    path = tmp_path / "nested" / "saved.json"
    save_config(config, str(path))
    assert load_config(str(path)) == config
