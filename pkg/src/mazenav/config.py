"""Run configuration: YAML file over defaults, plus dotted-key overrides.

Parsing is strict on purpose: an unknown key anywhere is an error, so a
typo cannot silently fall back to a default mid-experiment.
"""
from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .errors import ConfigError

PPO_DEFAULTS = {
    "episodes_per_batch": 8,
    "steps_per_episode": 200,
    "ppo_epochs": 4,
    "gamma": 0.99,
    "clip_eps": 0.1,
    "entropy_coef": 0.01,
    "value_coef": 0.5,
    "gae_lambda": 0.95,
    "lr": 1e-4,
    "warmup_steps": 300,
    "dropout_p": 0.1,
    "minibatch_size": 256,
}

DEFAULTS = {
    "map": "maps/maze15.txt",
    "map_seed": 2,
    "n_rays": 64,
    "seed": 0,
    "workers": 1,
    "output_dir": "",
    "stage1": {
        "walks": 20,
        "walk_steps": 2000,
        "pairs_per_walk": 2000,
        "positive_radius": 5,
        "negative_margin": 25,
        "epochs": 30,
        "batch": 128,
        "lr": 0.1,
        "momentum": 0.9,
        "weight_decay": 1e-7,
        "lr_decay": 0.2,
        "holdout_fraction": 0.1,
    },
    "stage2": {
        "batches": 60,
        "reward": "curiosity_discrete",
        "alpha": 1.0,
        "beta": 10.0,
        "tau": 0.5,
        "warm_start": True,
        "checkpoint_every": 20,
        "ppo": dict(PPO_DEFAULTS),
    },
    "stage3": {
        "batches": 40,
        "reward": "nav_sparse_dense",
        "alpha": 1.0,
        "beta": 10.0,
        "tau": 0.9,
        "explore_steps": 200,
        "freeze_shared": True,
        "checkpoint_every": 20,
        "ppo": {**PPO_DEFAULTS, "entropy_coef": 0.02},
    },
    "eval": {
        "n_goals": 50,
        "nav_steps": 200,
        "explore_steps": 200,
        "goal_seed": 0,
    },
}


def _merge(base: dict, update: dict, path: str = "") -> None:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a mapping")
            _merge(base[key], value, where + ".")
        else:
            base[key] = _coerce(value, base[key], where)


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{where} expects a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where} expects an integer, got {value!r}")
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where} expects a number, got {value!r}")
    return str(value)


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping, got {type(loaded).__name__}")
        _merge(cfg, loaded)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        dotted, raw = item.split("=", 1)
        node = cfg
        keys = dotted.split(".")
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"unknown config key: {dotted}")
            node = node[key]
        leaf = keys[-1]
        if leaf not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(node[leaf], dict):
            raise ConfigError(f"{dotted} is a section, not a value")
        node[leaf] = _coerce(raw, node[leaf], dotted)
    return cfg
