"""Run configuration: one YAML file plus flag overrides, fully resolved.

Every run writes its resolved configuration (defaults expanded) next to its
outputs. ``config_hash`` is the digest of the resolved mapping with the
machine-specific keys (``out_root``, ``run_id``) excluded, and is embedded in
checkpoints and reports so outputs can be traced back to their exact
configuration.
"""

from __future__ import annotations

import copy
from dataclasses import asdict
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .training import TrainConfig, config_digest

_TRAINING_DEFAULTS = {
    key: value
    for key, value in asdict(TrainConfig()).items()
    if key not in ("seed", "input_horizon", "output_horizon")
}

DEFAULT_CONFIG = {
    "run_id": None,
    "out_root": None,
    "seeds": [0],
    "data": {
        "csv": None,
        "test_csv": None,
        "cache": None,
        "schema": None,
        "synthetic": None,
        "keep_degenerate": False,
    },
    "window": {
        "input_horizon": 80,
        "output_horizon": 40,
        "stride": 1,
        "smooth": None,
    },
    "split": {
        "train_fraction": 0.7,
        "val_fraction": 0.15,
        "test_fraction": 0.15,
        "mode": "chronological",
    },
    "training": _TRAINING_DEFAULTS,
    "evaluation": {
        "split": "auto",
        "mc_eval": 0,
        "report_ae": False,
        "dump_forecasts": 0,
    },
}

_SYNTHETIC_DEFAULTS = {
    "n_vars": 6,
    "n_edges": 8,
    "length": 4000,
    "seed": 7,
    "noise_std": 0.1,
    "nonlinearity": "tanh",
}


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigurationError(f"unknown configuration key {where!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigurationError(f"{where!r} must be a mapping")
            merged[key] = _merge(defaults[key], value, where)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_run_config(path=None, overrides: dict | None = None) -> dict:
    """Read a YAML config file, merge defaults, and apply flag overrides.

    ``overrides`` maps dotted keys (e.g. ``"training.mode"``) to values; a
    None override means "not supplied" and is skipped.
    """
    from_file: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {path} must contain a mapping")
        from_file = loaded
    config = _merge(DEFAULT_CONFIG, from_file)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        _set_dotted(config, dotted, value)
    if config["data"]["synthetic"] is not None:
        config["data"]["synthetic"] = _merge(
            _SYNTHETIC_DEFAULTS, config["data"]["synthetic"], "data.synthetic"
        )
    _validate(config)
    return config


def _set_dotted(config: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = config
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigurationError(f"unknown configuration key {dotted!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigurationError(f"unknown configuration key {dotted!r}")
    node[keys[-1]] = value


def _validate(config: dict) -> None:
    seeds = config["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) for s in seeds
    ):
        raise ConfigurationError("seeds must be a non-empty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError("seeds must be unique")
    window = config["window"]
    for key in ("input_horizon", "output_horizon", "stride"):
        if not isinstance(window[key], int) or window[key] < 1:
            raise ConfigurationError(f"window.{key} must be a positive integer")
    # Constructing a TrainConfig validates the whole training section.
    train_config_for(config, config["seeds"][0])
    sources = [
        name
        for name in ("csv", "cache", "synthetic")
        if config["data"][name] is not None
    ]
    if len(sources) > 1:
        raise ConfigurationError(
            f"configure exactly one data source, got {sources}"
        )


def train_config_for(config: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        seed=seed,
        input_horizon=config["window"]["input_horizon"],
        output_horizon=config["window"]["output_horizon"],
        **config["training"],
    )


def config_hash(config: dict) -> str:
    hashable = {k: v for k, v in config.items() if k not in ("out_root", "run_id")}
    return config_digest(hashable)


def default_run_id(config: dict) -> str:
    mode = config["training"]["mode"].lower()
    tau = config["window"]["output_horizon"]
    return f"{mode}-h{tau}-{config_hash(config)[:10]}"


def dump_resolved(config: dict, path) -> None:
    """Write the fully-resolved configuration (with its hash) as YAML."""
    resolved = copy.deepcopy(config)
    resolved["config_hash"] = config_hash(config)
    Path(path).write_text(
        yaml.safe_dump(resolved, sort_keys=True, default_flow_style=False),
        encoding="utf-8",
    )
