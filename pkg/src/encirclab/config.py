"""Structured-text (YAML/JSON) configuration loading.

One file can carry any of the sections ``world``, ``apf``, ``train``,
``policy``, and ``scenarios``; key names match the dataclass field names
exactly and unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import fields
from typing import Optional

import yaml

from .evader import ApfConfig
from .harness import ScenarioSpec
from .policy import PolicyConfig
from .training import CurriculumStage, TrainConfig
from .world import WorldConfig


def load_config_file(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return data


def _build(cls, data: dict, label: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValueError(f"unknown {label} keys: {unknown}; valid: {sorted(known)}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return cls(**coerced)


def world_config_from_dict(data: Optional[dict]) -> WorldConfig:
    return _build(WorldConfig, data or {}, "world config")


def apf_config_from_dict(data: Optional[dict]) -> ApfConfig:
    return _build(ApfConfig, data or {}, "apf config")


def train_config_from_dict(data: Optional[dict]) -> TrainConfig:
    data = dict(data or {})
    stages = data.pop("custom_stages", None)
    cfg = _build(TrainConfig, data, "train config")
    if stages is not None:
        cfg.custom_stages = tuple(
            _build(CurriculumStage, dict(stage), "curriculum stage") for stage in stages
        )
    return cfg


def policy_config_from_dict(data: Optional[dict]) -> PolicyConfig:
    return _build(PolicyConfig, data or {}, "policy config")


def scenarios_from_config(entries: list) -> list:
    """Scenario catalog override: a list of ScenarioSpec mappings."""
    return [_build(ScenarioSpec, dict(entry), "scenario") for entry in entries]
