"""Experiment configuration: presets, YAML files and validation.

A config has five sections (``dataset``, ``model``, ``train``, ``eval``,
``output``) plus a top-level ``seed``.  A named preset supplies defaults;
the file overrides the preset and command-line flags override the file.
"""

from __future__ import annotations

import copy
from dataclasses import fields

import yaml

from .model import ArchitectureSpec
from .trainer import TrainConfig

PRESETS = {
    "bars": {
        "dataset": {
            "kind": "bars",
            "n": 2048,
            "side": 8,
            "bar_value": 0.5,
            "noise_std": 0.05,
            "split": {"kind": "none"},
        },
        "model": {"latent_dim": 8, "p": 1, "inference_hidden": [], "generator": ["affine"]},
        "train": {
            "lam": 1.0,
            "lr_adam": 1e-2,
            "lr_prox": 1e-4,
            "batch_size": 64,
            "iterations": 20000,
            "epochs": None,
            "batching_mode": "uniform_with_replacement",
        },
    },
    "mocap": {
        "dataset": {
            "kind": "mocap",
            "directory": "data/cmu",
            "subject": "07",
            "train_trials": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
            "test_trials": [11],
            "root_mode": "rotation",
        },
        "model": {"latent_dim": 16, "p": 8, "inference_hidden": [], "generator": ["tanh", "affine"]},
        "train": {
            "lam": 1.0,
            "lr_adam": 1e-3,
            "lr_prox": 1e-4,
            "batch_size": 64,
            "iterations": None,
            "epochs": 1000,
            "batching_mode": "shuffled_epochs",
        },
    },
    "meg-style": {
        "dataset": {
            "kind": "csv",
            "path": "data/regions.csv",
            "manifest": "data/regions.manifest",
            "split": {"kind": "none"},
        },
        "model": {
            "latent_dim": 20,
            "p": 10,
            "inference_hidden": ["affine:256", "relu"],
            "generator": ["tanh", "affine"],
        },
        "train": {
            "lam": 10.0,
            "lr_adam": 1e-3,
            "lr_prox": 1e-6,
            "batch_size": 256,
            "iterations": None,
            "epochs": 40,
            "batching_mode": "shuffled_epochs",
        },
    },
}

BASE = {
    "preset": None,
    "seed": 0,
    "dataset": {},
    "model": {},
    "train": {},
    "eval": {"mc_samples": 1, "topk": 3, "split": "test"},
    "output": {"dir": "runs/default"},
}

DATASET_KINDS = ("bars", "mocap", "csv", "file")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def expand(user: dict | None, overrides: dict | None = None) -> dict:
    """Effective config: base <- preset <- user file <- overrides."""
    user = user or {}
    overrides = overrides or {}
    preset = overrides.get("preset") or user.get("preset")
    cfg = copy.deepcopy(BASE)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"unknown preset {preset!r}; choose from {sorted(PRESETS)}"])
        cfg = deep_merge(cfg, PRESETS[preset])
    cfg = deep_merge(cfg, user)
    cfg = deep_merge(cfg, overrides)
    cfg["preset"] = preset
    cfg["train"].setdefault("seed", cfg["seed"])
    if overrides.get("seed") is not None:
        cfg["train"]["seed"] = overrides["seed"]
    return cfg


def load(path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return doc


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig.from_dict(cfg["train"])


def arch_spec(cfg: dict) -> ArchitectureSpec:
    m = cfg["model"]
    return ArchitectureSpec(
        int(m["latent_dim"]),
        int(m["p"]),
        tuple(m.get("inference_hidden", ())),
        tuple(m.get("generator", ("affine",))),
    )


def validate(cfg: dict, need_model: bool = True, need_dataset: bool = True) -> None:
    """Raise :class:`ConfigError` listing every problem found."""
    problems = []
    known_top = set(BASE)
    problems += [f"unknown top-level key {k!r}" for k in cfg if k not in known_top]
    if need_dataset:
        ds = cfg.get("dataset", {})
        kind = ds.get("kind")
        if kind not in DATASET_KINDS:
            problems.append(f"dataset.kind must be one of {DATASET_KINDS}, got {kind!r}")
        elif kind == "csv":
            for key in ("path", "manifest"):
                if not ds.get(key):
                    problems.append(f"dataset.{key} is required for csv datasets")
        elif kind == "file" and not ds.get("path"):
            problems.append("dataset.path is required for file datasets")
        elif kind == "mocap":
            for key in ("directory", "subject", "train_trials", "test_trials"):
                if not ds.get(key):
                    problems.append(f"dataset.{key} is required for mocap datasets")
        split = ds.get("split", {"kind": "none"}) or {"kind": "none"}
        if kind != "mocap" and split.get("kind", "none") not in ("none", "rows"):
            problems.append("dataset.split.kind must be 'none' or 'rows'")
        if split.get("kind") == "rows":
            frac = split.get("train_fraction", 0.9)
            if not 0 < frac < 1:
                problems.append("dataset.split.train_fraction must lie in (0, 1)")
    if need_model:
        try:
            arch_spec(cfg)
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"model: {exc}")
        try:
            problems += [f"train: {e}" for e in train_config(cfg).validate()]
        except (TypeError, ValueError) as exc:
            problems.append(f"train: {exc}")
    ev = cfg.get("eval", {})
    if int(ev.get("mc_samples", 1)) < 1:
        problems.append("eval.mc_samples must be >= 1")
    if problems:
        raise ConfigError(problems)


TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
