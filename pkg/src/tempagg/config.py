"""Run configuration: named presets, layered INI files and flag overrides.

Layering order is preset -> config file -> command-line flags. A config file
looks like::

    [run]
    preset = epic100-anticipation
    features = data/features
    annotations = data/train.csv
    modality = rgb
    # relative paths resolve against this file's directory
    checkpoint = runs/rgb.ckpt
    out = runs/rgb
    num_classes = 10

    [train]
    epochs = 15

    [sampling]
    spanning_scales = 2, 3, 5

    [model]
    hidden = 512
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .sampler import (BREAKFAST_ACTIVITY, EPIC100_ANTICIPATION, EPIC100_RECOGNITION, MODALITIES,
                      SamplingConfig)
from .trainer import TrainConfig

PRESETS: dict[str, tuple[SamplingConfig, TrainConfig]] = {
    "epic100-anticipation": (EPIC100_ANTICIPATION, TrainConfig.for_task("anticipation")),
    "epic100-recognition": (EPIC100_RECOGNITION, TrainConfig.for_task("recognition")),
    "breakfast-activity": (BREAKFAST_ACTIVITY, TrainConfig.for_task("activity")),
}
TASK_PRESET = {"anticipation": "epic100-anticipation", "recognition": "epic100-recognition",
               "activity": "breakfast-activity"}


@dataclass
class RunConfig:
    task: str
    preset: str
    sampling: SamplingConfig
    train: TrainConfig
    features: Path | None = None
    annotations: Path | None = None
    subsets: Path | None = None
    checkpoint: Path | None = None
    out: Path | None = None
    modality: str = "rgb"
    num_classes: int | None = None
    hidden: int = 512
    proj: int = 512

    def require(self, *names: str) -> None:
        """Fail unless each named path is set; input paths must also exist."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"{name}: required but not set")
            if name in ("features", "annotations", "subsets") and not Path(value).exists():
                raise ConfigError(f"{name}: path {value} does not exist")


def _parse_value(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "ints":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if kind == "floats":
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if kind == "windows":
            return tuple(tuple(float(v) for v in w.split(":")) for w in raw.replace(",", " ").split())
        if kind == "scope":
            return None if raw in ("entire_video", "none", "") else float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


SAMPLING_KEYS = {"k_recent": int, "spanning_scales": "ints", "spanning_scope": "scope",
                 "recent_starts": "floats", "recent_windows": "windows",
                 "recent_partitions": int, "anticipation_gap": float}
TRAIN_KEYS = {f.name: int if f.type in ("int", int) else float for f in fields(TrainConfig)}
RUN_KEYS = {"features": Path, "annotations": Path, "subsets": Path, "checkpoint": Path,
            "out": Path, "modality": str, "num_classes": int}
MODEL_KEYS = {"hidden": int, "proj": int}


def build_run_config(task: str | None = None, preset: str | None = None, config_path=None,
                     overrides: dict | None = None) -> RunConfig:
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    parser = configparser.ConfigParser()
    if config_path is not None:
        if not Path(config_path).exists():
            raise ConfigError(f"config: file {config_path} does not exist")
        try:
            parser.read(config_path)
        except configparser.Error as exc:
            raise ConfigError(f"config: {exc}") from None
    run = dict(parser["run"]) if parser.has_section("run") else {}
    preset = preset or run.pop("preset", None)
    if preset is None:
        task = task or run.get("task")
        if task not in TASK_PRESET:
            raise ConfigError(f"task: expected one of {sorted(TASK_PRESET)}, got {task!r}")
        preset = TASK_PRESET[task]
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    sampling, train = PRESETS[preset]
    if task is not None and task != sampling.task:
        raise ConfigError(f"task: {task!r} conflicts with preset {preset!r} ({sampling.task})")
    run.pop("task", None)

    try:
        if parser.has_section("sampling"):
            changes = {}
            for key, raw in parser["sampling"].items():
                if key not in SAMPLING_KEYS:
                    raise ConfigError(f"sampling.{key}: unknown key")
                changes[key] = _parse_value(SAMPLING_KEYS[key], raw, f"sampling.{key}")
            sampling = replace(sampling, **changes)
        train_changes = {}
        if parser.has_section("train"):
            for key, raw in parser["train"].items():
                if key not in TRAIN_KEYS:
                    raise ConfigError(f"train.{key}: unknown key")
                train_changes[key] = _parse_value(TRAIN_KEYS[key], raw, f"train.{key}")
        for key in ("epochs", "seed"):
            if key in overrides:
                train_changes[key] = overrides.pop(key)
        train = replace(train, **train_changes)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid setting: {exc}") from None

    cfg = RunConfig(task=sampling.task, preset=preset, sampling=sampling, train=train)
    for key, raw in run.items():
        if key not in RUN_KEYS:
            raise ConfigError(f"run.{key}: unknown key")
        kind = RUN_KEYS[key]
        if kind is Path:
            # relative paths in a config file are relative to that file
            value = Path(raw.strip())
            setattr(cfg, key, value if value.is_absolute() else Path(config_path).parent / value)
        elif kind is str:
            setattr(cfg, key, raw.strip())
        else:
            setattr(cfg, key, _parse_value(kind, raw, f"run.{key}"))
    if parser.has_section("model"):
        for key, raw in parser["model"].items():
            if key not in MODEL_KEYS:
                raise ConfigError(f"model.{key}: unknown key")
            setattr(cfg, key, _parse_value(int, raw, f"model.{key}"))
    for key, value in overrides.items():
        if key not in RUN_KEYS and key not in MODEL_KEYS:
            raise ConfigError(f"{key}: unknown override")
        setattr(cfg, key, Path(value) if RUN_KEYS.get(key) is Path else value)
    if cfg.modality not in MODALITIES:
        raise ConfigError(f"modality: expected one of {MODALITIES}, got {cfg.modality!r}")
    if cfg.num_classes is not None and cfg.num_classes < 2:
        raise ConfigError(f"num_classes: must be >= 2, got {cfg.num_classes}")
    if cfg.hidden < 1 or cfg.proj < 1:
        raise ConfigError("model: hidden and proj widths must be positive")
    return cfg
