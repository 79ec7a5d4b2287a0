"""Flat run configuration: TOML files, ``key=value`` overrides, JSON manifests.

Keys are dotted (``xbm.memory_ratio``); a TOML table ``[xbm]`` with
``memory_ratio = 0.5`` is the same key. Every key has a default, so a
resolved configuration always lists all of them.
"""

from __future__ import annotations

import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import DelimitedSchema, load_delimited, split_per_class, synth_clusters
from .desk import HOLDOUT_FRACTION, TASK
from .errors import ConfigError, XbmError
from .losses import LossHyperparams
from .memory import XbmConfig
from .train import TrainConfig

DEFAULTS = {
    "seed": 0,
    "P": 4,
    "K": 2,
    "iterations": 3000,
    "warmup_iterations": 200,
    "lr": 3e-3,
    "lr_decay_at": [2000],
    "lr_decay_factor": 0.1,
    "weight_decay": 5e-4,
    "hidden_dims": [64],
    "embedding_dim": 16,
    "loss.scheme": "contrastive",
    "loss.lambda_contrastive": 0.5,
    "loss.eta_triplet": 0.1,
    "loss.ms_beta": 50.0,
    "loss.ms_alpha": 2.0,
    "loss.ms_lambda": 1.0,
    "xbm.enabled": True,
    "xbm.memory_ratio": 1.0,
    "data.source": "synthetic",
    "data.path": "",
    "data.label_column": -1,
    "data.header": False,
    "data.holdout_fraction": HOLDOUT_FRACTION,
    **{f"data.{k}": v for k, v in TASK.items()},
    "drift.steps": [10, 100, 1000],
    "drift.every": 100,
    "drift.probe_size": 256,
    "drift.lemma_trials": 1000,
    "eval.ks": [1, 10, 100],
}


def _flatten(tree, prefix=""):
    out = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _coerce(key, value):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError("expected true/false")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError("expected an integer")
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError("expected a number")
            return float(value)
        if isinstance(default, list):
            if not isinstance(value, list):
                value = [value]
            return [int(v) if isinstance(v, (int, float)) and float(v).is_integer() else v for v in value]
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value {value!r} for key '{key}': {exc}") from None


def resolve(values):
    """Merge ``values`` over the defaults, rejecting unknown keys."""
    flat = dict(DEFAULTS)
    for key, value in values.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        flat[key] = _coerce(key, value)
    return flat


def load_config(path):
    """Read a TOML config, or a JSON run manifest (its ``config`` entry)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return resolve(doc.get("config", doc))
    try:
        return resolve(_flatten(tomllib.loads(text)))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_override(item):
    """``"key=value"`` -> ``(key, value)``; the value is parsed as a TOML literal."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = (s.strip() for s in item.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def apply_overrides(flat, overrides):
    updates = dict(parse_override(o) for o in overrides)
    return resolve({**flat, **updates})


def _with_key(key, build):
    try:
        return build()
    except XbmError as exc:
        raise ConfigError(f"'{key}': {exc}") from None


def train_config(flat):
    loss = _with_key(
        "loss.*",
        lambda: LossHyperparams(
            scheme=flat["loss.scheme"],
            lambda_contrastive=flat["loss.lambda_contrastive"],
            eta_triplet=flat["loss.eta_triplet"],
            ms_beta=flat["loss.ms_beta"],
            ms_alpha=flat["loss.ms_alpha"],
            ms_lambda=flat["loss.ms_lambda"],
        ),
    )
    xbm = None
    if flat["xbm.enabled"]:
        xbm = _with_key("xbm.memory_ratio", lambda: XbmConfig(flat["xbm.memory_ratio"]))
    return _with_key(
        "P/K/iterations/warmup_iterations",
        lambda: TrainConfig(
            P=flat["P"],
            K=flat["K"],
            iterations=flat["iterations"],
            warmup_iterations=flat["warmup_iterations"],
            lr=flat["lr"],
            lr_decay_at=tuple(flat["lr_decay_at"]),
            lr_decay_factor=flat["lr_decay_factor"],
            weight_decay=flat["weight_decay"],
            seed=flat["seed"],
            hidden_dims=tuple(flat["hidden_dims"]),
            embedding_dim=flat["embedding_dim"],
            loss=loss,
            xbm=xbm,
        ),
    )


def load_dataset(flat):
    """The full dataset named by the ``data.*`` keys."""
    source = flat["data.source"]
    if source == "synthetic":
        params = {k: flat[f"data.{k}"] for k in TASK}
        return _with_key("data.*", lambda: synth_clusters(seed=flat["seed"], **params))
    if source == "csv":
        if not flat["data.path"]:
            raise ConfigError("'data.path' must be set when data.source = \"csv\"")
        schema = DelimitedSchema(label_column=flat["data.label_column"], header=flat["data.header"])
        try:
            return load_delimited(flat["data.path"], schema)
        except OSError as exc:
            raise ConfigError(f"'data.path': cannot read {flat['data.path']}: {exc.strerror}") from None
    raise ConfigError(f"'data.source' must be \"synthetic\" or \"csv\", got {source!r}")


def dataset_splits(flat):
    """``(train, heldout)`` for the configured dataset."""
    data = load_dataset(flat)
    return _with_key(
        "data.holdout_fraction", lambda: split_per_class(data, flat["data.holdout_fraction"], flat["seed"])
    )
