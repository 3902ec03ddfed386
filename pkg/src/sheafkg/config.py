"""Run configuration: a nested JSON document with dotted-key overrides.

Every field the user did not set is tracked and echoed into output reports
under ``defaulted`` so no default is ever silent. Input paths are checked
for existence at load time.
"""

from __future__ import annotations

import copy
import json
import os

from .errors import DataError, UsageError

DEFAULTS = {
    "seed": 0,
    "paths": {
        "train": None,
        "inf_obs": None,
        "inf_est": None,
        "queries": None,
        "workdir": "runs/default",
    },
    "model": {
        "family": "transe",
        "d": 16,
        "p": 2,
        "loss": "crossentropy",
        "lr": 1e-3,
        "epochs": 100,
        "batch_size": 128,
        "num_negs_per_pos": 1,
        "margin": 9.0,
        "adversarial_temperature": 1.0,
        "negative_mode": "corrupt_tail",
    },
    "extension": {
        "mode": "semi_inductive",
        "alpha": 0.1,
        "max_iters": 1000,
        "tol": 0.0,
        "init": "normal",
        "normalized": True,
        "closed_form": False,
        "dense_limit": 4096,
    },
    "eval": {
        "k": [1, 3, 10],
    },
    "grid": {
        "query_shapes": ["1p"],
    },
}

# Leaves that are lists by nature, not grid axes.
LIST_VALUED = {"eval.k", "grid.query_shapes"}

_INPUT_PATH_KEYS = ("train", "inf_obs", "inf_est", "queries")

WORKERS_ENV = "SHEAFKG_WORKERS"


def worker_count() -> int:
    """Worker budget from the environment; unset means the core count."""
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{WORKERS_ENV} must be >= 1")
    return n


def _leaf_keys(tree: dict, prefix: str = "") -> list[str]:
    keys = []
    for name, value in tree.items():
        dotted = f"{prefix}{name}"
        if isinstance(value, dict):
            keys.extend(_leaf_keys(value, dotted + "."))
        else:
            keys.append(dotted)
    return keys


def get_key(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise UsageError(f"unknown config key {dotted!r}")
        node = node[part]
    return node


def set_key(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise UsageError(f"unknown config section {dotted!r}")
        node = node[part]
    if parts[-1] not in node:
        raise UsageError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def _merge(base: dict, user: dict, prefix: str = "") -> list[str]:
    """Overlay user values onto base; returns the dotted keys that were set."""
    touched = []
    for name, value in user.items():
        dotted = f"{prefix}{name}"
        if name not in base:
            raise UsageError(f"unknown config key {dotted!r}")
        if isinstance(base[name], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {dotted!r} must be a section")
            touched.extend(_merge(base[name], value, dotted + "."))
        else:
            base[name] = value
            touched.append(dotted)
    return touched


def parse_override(token: str) -> tuple[str, object]:
    """``section.key=value`` with the value parsed as JSON when possible."""
    if token.startswith("--"):
        token = token[2:]
    if "=" not in token:
        raise UsageError(f"override {token!r} must look like section.key=value")
    key, raw = token.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path: str | None, overrides=()) -> tuple[dict, list[str]]:
    """Merge defaults <- config file <- overrides.

    Returns ``(config, defaulted)`` where ``defaulted`` lists dotted keys
    the user never set.
    """
    cfg = copy.deepcopy(DEFAULTS)
    touched: set[str] = set()
    if path is not None:
        if not os.path.exists(path):
            raise DataError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"config file {path} is not valid JSON: {exc}") from None
        touched.update(_merge(cfg, user))
    for token in overrides:
        key, value = parse_override(token)
        set_key(cfg, key, value)
        touched.add(key)
    for key in _INPUT_PATH_KEYS:
        value = cfg["paths"][key]
        if value is not None and not os.path.exists(value):
            raise DataError(f"paths.{key} does not exist: {value}")
    defaulted = sorted(set(_leaf_keys(cfg)) - touched)
    return cfg, defaulted


def config_echo(cfg: dict, defaulted: list[str]) -> dict:
    """Effective config plus the list of defaulted keys, for reports."""
    echo = copy.deepcopy(cfg)
    echo["defaulted"] = list(defaulted)
    echo["workers"] = worker_count()
    return echo


def grid_axes(cfg: dict) -> list[tuple[str, list]]:
    """Dotted keys holding list values that act as grid axes."""
    axes = []
    for key in _leaf_keys(cfg):
        if key in LIST_VALUED:
            continue
        value = get_key(cfg, key)
        if isinstance(value, list):
            axes.append((key, value))
    return axes
