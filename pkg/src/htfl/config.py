"""Run configuration: defaults, YAML loading, validation, and builders.

The config is a nested mapping with a fixed schema. Unknown keys are
rejected with their dotted path; every leaf is also exposed as a CLI
flag of the same dotted name. ``config_version`` guards format drift.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

from .datasets import CsvSchema, Dataset, gen_gaussian_mixture, gen_har_like, ingest_csv
from .engine import ExperimentSpec
from .errors import ConfigError
from .methods import METHOD_NAMES, MethodConfig
from .partition import ScenarioSpec

CONFIG_VERSION = 1

DEFAULTS: dict = {
    "config_version": CONFIG_VERSION,
    "output_dir": "runs/out",
    "experiment": {
        "n_clients": 20,
        "rounds": 1000,
        "participation": 1.0,
        "local_epochs": 1,
        "seed": 0,
        "repeats": 3,
        "eval_every": 1,
        "workers": 1,
        "learning_rate": 0.01,
        "momentum": 0.0,
        "record_timing": True,
        "partition_file": None,
    },
    "model": {
        "group": "mlp-4",
        "feature_dim": 512,
    },
    "method": {
        "name": "local",
        "lambda_reg": 1.0,
        "lambda_kd": 1.0,
        "temperature": 1.0,
        "server_epochs": 100,
        "server_lr": 0.01,
        "svd_energy": 0.95,
        "margin_cap": 100.0,
        "noise_dim": 32,
        "proto_weighting": "per_class",
    },
    "scenario": {
        "kind": "dirichlet",
        "alpha": 0.1,
        "classes_per_client": 2,
        "shift_domains": 1,
    },
    "data": {
        "source": "gaussian",  # gaussian | har | csv
        "classes": 10,
        "samples": 5000,
        "dims": 32,
        "separation": 6.0,
        "subjects": 30,
        "channels": 9,
        "length": 128,
        "subject_bias": 1.0,
        "csv_path": None,
        "label_col": "label",
        "group_col": None,
        "standardize": True,
    },
}

# leaves whose value may be null in YAML
_NULLABLE = {
    "experiment.partition_file", "data.csv_path", "data.group_col",
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def leaf_paths(tree: dict = DEFAULTS, prefix: str = "") -> list[str]:
    out = []
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            out.extend(leaf_paths(value, path + "."))
        else:
            out.append(path)
    return out


def _check_type(path: str, value, default):
    if value is None:
        if path in _NULLABLE:
            return None
        raise ConfigError(f"config key '{path}' must not be null")
    if default is None:
        if not isinstance(value, (str, int, float)):
            raise ConfigError(f"config key '{path}' has unsupported type {type(value).__name__}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key '{path}' expects a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key '{path}' expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{path}' expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key '{path}' expects a string, got {value!r}")
        return value
    raise ConfigError(f"config key '{path}' has unsupported schema type")


def _merge(base: dict, update: dict, prefix: str = "") -> dict:
    out = {}
    for key in update:
        if key not in base:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
    for key, default in base.items():
        path = f"{prefix}{key}"
        if key not in update:
            out[key] = copy.deepcopy(default)
        elif isinstance(default, dict):
            if not isinstance(update[key], dict):
                raise ConfigError(f"config key '{path}' expects a mapping")
            out[key] = _merge(default, update[key], path + ".")
        else:
            out[key] = _check_type(path, update[key], default)
    return out


def set_path(cfg: dict, path: str, raw_value: str):
    """Apply one dotted-path override; the value is parsed as a YAML scalar."""
    keys = path.split(".")
    node = DEFAULTS
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"unknown config key '{path}'")
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"unknown config key '{path}'")
    default = node[keys[-1]]
    try:
        value = yaml.safe_load(raw_value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for '{path}': {exc}") from exc
    target = cfg
    for key in keys[:-1]:
        target = target[key]
    target[keys[-1]] = _check_type(path, value, default)


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> dict:
    """Defaults, then the YAML file, then dotted-path overrides, then HTFL_SEED."""
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {p}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {p} must contain a mapping")
    else:
        loaded = {}
    cfg = _merge(DEFAULTS, loaded)
    for key, raw in (overrides or {}).items():
        set_path(cfg, key, raw)
    env_seed = os.environ.get("HTFL_SEED")
    if env_seed is not None:
        try:
            cfg["experiment"]["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"HTFL_SEED must be an integer, got {env_seed!r}") from None
    if cfg["config_version"] != CONFIG_VERSION:
        raise ConfigError(
            f"unsupported config_version {cfg['config_version']}; expected {CONFIG_VERSION}"
        )
    return cfg


def build_scenario(cfg: dict) -> ScenarioSpec:
    sc = cfg["scenario"]
    return ScenarioSpec(
        kind=sc["kind"],
        n_clients=cfg["experiment"]["n_clients"],
        alpha=sc["alpha"],
        classes_per_client=sc["classes_per_client"],
        shift_domains=sc["shift_domains"],
    )


def build_method_config(cfg: dict) -> MethodConfig:
    m = cfg["method"]
    if m["name"] not in METHOD_NAMES:
        raise ConfigError(f"unknown method '{m['name']}'; known: {list(METHOD_NAMES)}")
    return MethodConfig(
        lambda_reg=m["lambda_reg"],
        lambda_kd=m["lambda_kd"],
        temperature=m["temperature"],
        server_epochs=m["server_epochs"],
        server_lr=m["server_lr"],
        svd_energy=m["svd_energy"],
        margin_cap=m["margin_cap"],
        noise_dim=m["noise_dim"],
        proto_weighting=m["proto_weighting"],
    )


def build_experiment(cfg: dict) -> ExperimentSpec:
    e = cfg["experiment"]
    try:
        return ExperimentSpec(
            scenario=build_scenario(cfg),
            group=cfg["model"]["group"],
            method=cfg["method"]["name"],
            feature_dim=cfg["model"]["feature_dim"],
            rounds=e["rounds"],
            participation=e["participation"],
            local_epochs=e["local_epochs"],
            seed=e["seed"],
            repeats=e["repeats"],
            eval_every=e["eval_every"],
            workers=e["workers"],
            learning_rate=e["learning_rate"],
            momentum=e["momentum"],
            record_timing=e["record_timing"],
            method_config=build_method_config(cfg),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def dataset_factory(cfg: dict):
    """A callable seed -> Dataset for the configured source."""
    d = cfg["data"]
    source = d["source"]
    if source == "gaussian":
        return lambda seed: gen_gaussian_mixture(
            num_classes=d["classes"], n_samples=d["samples"], dims=d["dims"],
            separation=d["separation"], seed=seed,
        )
    if source == "har":
        return lambda seed: gen_har_like(
            num_classes=d["classes"], subjects=d["subjects"], n_samples=d["samples"],
            channels=d["channels"], length=d["length"],
            subject_bias=d["subject_bias"], seed=seed,
        )
    if source == "csv":
        if not d["csv_path"]:
            raise ConfigError("data.csv_path is required when data.source is 'csv'")
        schema = CsvSchema(
            label_col=d["label_col"],
            group_col=d["group_col"],
            channels=d["channels"] if d["source"] == "csv" and _wants_sequence(cfg) else None,
            length=d["length"] if _wants_sequence(cfg) else None,
            standardize=d["standardize"],
        )
        loaded: dict[str, Dataset] = {}

        def factory(seed: int) -> Dataset:
            if "ds" not in loaded:
                loaded["ds"] = ingest_csv(d["csv_path"], schema)
            return loaded["ds"]

        return factory
    raise ConfigError(f"unknown data.source '{source}'; expected gaussian, har or csv")


def _wants_sequence(cfg: dict) -> bool:
    return cfg["model"]["group"].startswith("sen-")


def dump_defaults() -> str:
    return yaml.safe_dump(default_config(), sort_keys=False)
