"""Run configuration: a YAML file with every seed and hyperparameter spelled out."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from .nn import TrainConfig
from .reflect import KMeansConfig, ReflectionConfig
from .router import TreeParams


class ConfigError(ValueError):
    pass


DEFAULT_HIDDEN = {"mnist": [256], "emnist": [512, 256]}

DEFAULTS: dict[str, Any] = {
    "dataset": {
        "name": "mnist",
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
        "test_fraction": 0.2,
        "split_seed": 0,
        "subsample": None,
        "test_subsample": None,
        "subsample_seed": 7,
        "emnist_orientation": "corrected",
    },
    "network": {"hidden": None},
    "general": {"learning_rate": 0.1, "batch_size": 32, "epochs": 1, "seed": 42, "shuffle": True},
    "specialist": {"learning_rate": 0.1, "batch_size": 32, "epochs": 20, "seed": 1042, "shuffle": True},
    "reflection": {"k": 2, "cv_folds": 5, "error_loss_threshold": None},
    "kmeans": {"seed": 42, "max_iter": 100, "tol": 1e-6, "restarts": 5},
    "router": {"max_depth": 12, "min_samples_leaf": 5, "min_samples_split": 10, "balance_classes": False},
    "output": {"dir": "runs", "report": "text"},
}


@dataclass
class DataConfig:
    name: str
    train_images: Path
    train_labels: Path
    test_images: Optional[Path]
    test_labels: Optional[Path]
    test_fraction: float
    split_seed: int
    subsample: Optional[int]
    test_subsample: Optional[int]
    subsample_seed: int
    transpose: bool


@dataclass
class RunConfig:
    data: DataConfig
    reflection: ReflectionConfig
    out_dir: Path
    report_format: str
    raw: dict


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key} must be a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def apply_seed(raw: dict, seed: int) -> None:
    """One base seed for every stochastic training stage; data seeds stay put."""
    raw["general"]["seed"] = seed
    raw["specialist"]["seed"] = seed + 1000
    raw["kmeans"]["seed"] = seed


def load_raw(path=None, overrides: dict | None = None) -> tuple[dict, Path]:
    raw = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        raw = _merge(raw, loaded)
        base_dir = path.parent
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".")
        raw[section][key] = value
    return raw, base_dir


def _path(value, base_dir: Path, label: str, required: bool) -> Optional[Path]:
    if value is None:
        if required:
            raise ConfigError(f"dataset.{label} is required")
        return None
    p = Path(value)
    if not p.is_absolute():
        p = base_dir / p
    if not p.exists():
        raise ConfigError(f"dataset.{label} does not exist: {p}")
    return p


def build(raw: dict, base_dir: Path, require_data: bool = True) -> RunConfig:
    try:
        d = raw["dataset"]
        if d["emnist_orientation"] not in ("corrected", "raw"):
            raise ConfigError("dataset.emnist_orientation must be 'corrected' or 'raw'")
        name = str(d["name"]).lower()
        data = DataConfig(
            name=name,
            train_images=_path(d["train_images"], base_dir, "train_images", require_data),
            train_labels=_path(d["train_labels"], base_dir, "train_labels", require_data),
            test_images=_path(d["test_images"], base_dir, "test_images", False),
            test_labels=_path(d["test_labels"], base_dir, "test_labels", False),
            test_fraction=float(d["test_fraction"]),
            split_seed=int(d["split_seed"]),
            subsample=None if d["subsample"] is None else int(d["subsample"]),
            test_subsample=None if d["test_subsample"] is None else int(d["test_subsample"]),
            subsample_seed=int(d["subsample_seed"]),
            transpose=name.startswith("emnist") and d["emnist_orientation"] == "corrected",
        )
        if (data.test_images is None) != (data.test_labels is None):
            raise ConfigError("dataset.test_images and dataset.test_labels go together")

        hidden = raw["network"]["hidden"]
        if hidden is None:
            hidden = DEFAULT_HIDDEN["emnist" if name.startswith("emnist") else "mnist"]
        r = raw["reflection"]
        reflection = ReflectionConfig(
            k_specialists=int(r["k"]),
            hidden=tuple(int(h) for h in hidden),
            general_train=TrainConfig(**raw["general"]),
            specialist_train=TrainConfig(**raw["specialist"]),
            kmeans=KMeansConfig(**raw["kmeans"]),
            tree_params=TreeParams(**raw["router"]),
            cv_folds=int(r["cv_folds"]),
            error_loss_threshold=None if r["error_loss_threshold"] is None else float(r["error_loss_threshold"]),
        )
        fmt = raw["output"]["report"]
        if fmt not in ("text", "structured"):
            raise ConfigError("output.report must be 'text' or 'structured'")
        out_dir = Path(raw["output"]["dir"])
        if not out_dir.is_absolute():
            out_dir = base_dir / out_dir
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(data, reflection, out_dir, fmt, raw)
