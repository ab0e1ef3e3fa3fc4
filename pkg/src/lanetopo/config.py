"""Run configuration: one strict-schema JSON file covering scene generation,
model shape, loss weights, optimization, and ablation flags.

Unknown keys are rejected rather than ignored so a typo in an ablation flag
cannot silently invalidate an experiment. Every command echoes the fully
resolved configuration (all defaults materialized) before doing work.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, is_dataclass, replace

from .errors import ConfigError
from .losses import LossWeights
from .model import ModelConfig
from .scenes import SceneConfig
from .training import TrainConfig

ABLATION_FLAGS = ("plain_sa", "no_curve_ca", "baseline_l2l", "baseline_l2t", "no_contrastive")


@dataclass
class RunConfig:
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    plain_sa: bool = False
    no_curve_ca: bool = False
    baseline_l2l: bool = False
    baseline_l2t: bool = False
    no_contrastive: bool = False

    def resolved_model(self) -> ModelConfig:
        """Model config with the ablation flags folded in."""
        return replace(self.model,
                       plain_sa=self.model.plain_sa or self.plain_sa,
                       no_curve_ca=self.model.no_curve_ca or self.no_curve_ca,
                       baseline_l2l=self.model.baseline_l2l or self.baseline_l2l,
                       baseline_l2t=self.model.baseline_l2t or self.baseline_l2t)

    def resolved_train(self) -> TrainConfig:
        return replace(self.train,
                       seed=self.train.seed if self.train.seed else self.seed,
                       no_contrastive=self.train.no_contrastive or self.no_contrastive)


def _coerce(value, default, path: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config field '{path}' must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"config field '{path}' must be an integer")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"config field '{path}' must be a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config field '{path}' must be a list")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config field '{path}' must be a string")
        return value
    raise ConfigError(f"config field '{path}' has unsupported type")


def _apply(instance, doc: dict, path: str = ""):
    known = {f.name for f in fields(instance)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config key{'s' if len(unknown) > 1 else ''} "
                          f"{unknown} at '{path or '<root>'}'")
    values = {}
    for f in fields(instance):
        if f.name not in doc:
            continue
        current = getattr(instance, f.name)
        if is_dataclass(current):
            if not isinstance(doc[f.name], dict):
                raise ConfigError(f"config field '{path}{f.name}' must be an object")
            values[f.name] = _apply(current, doc[f.name], f"{path}{f.name}.")
        else:
            values[f.name] = _coerce(doc[f.name], current, f"{path}{f.name}")
    try:
        return replace(instance, **values)
    except ConfigError:
        raise
    except Exception as exc:  # dataclass __post_init__ validation
        raise ConfigError(f"invalid configuration at '{path or '<root>'}': {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return _apply(RunConfig(), doc)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    doc = dataclasses.asdict(cfg)

    def detuple(obj):
        if isinstance(obj, dict):
            return {k: detuple(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [detuple(v) for v in obj]
        return obj

    return detuple(doc)


def echo_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
