"""YAML run configuration.

Schema (every section optional)::

    env:          EnvConfig fields
    train:        TrainConfig fields
    seed:         training seed (int)
    evaluation:   ExperimentSpec fields used by ``v2xshare eval``
    experiments:  list of ExperimentSpec mappings; list-valued keys other than
                  ``test_seeds`` expand as a cartesian product
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .env import ConfigError, EnvConfig
from .harness import ExperimentSpec, expand_experiments
from .train import TrainConfig

SECTIONS = {"env", "train", "seed", "evaluation", "experiments"}


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    evaluation: ExperimentSpec = field(default_factory=ExperimentSpec)
    experiments: list = field(default_factory=list)


def parse_config(data: dict | None) -> RunConfig:
    data = data or {}
    unknown = set(data) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return RunConfig(
        env=EnvConfig.from_dict(data.get("env")),
        train=TrainConfig.from_dict(data.get("train")),
        seed=int(data.get("seed", 0)),
        evaluation=ExperimentSpec.from_dict(data.get("evaluation") or {}),
        experiments=expand_experiments(data.get("experiments") or []),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)
