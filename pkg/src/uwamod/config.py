"""Run configuration: one YAML file describing a whole experiment.

Example::

    system:
      N: 32
      N_g: 8
      P: 4
    dataset:
      m_train: 2000
      m_test: 200
    train:
      epochs: 150
      batches: 20
      train_snr_db: 15
    eval:
      snr_db: [0, 5, 10, 15, 20]
      trials: 50

Every section is optional; omitted values take the library defaults.
Unknown sections or keys are rejected.
"""
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .channel import SystemConfig
from .errors import ConfigError
from .training import TrainConfig


@dataclass(frozen=True)
class DatasetConfig:
    m_train: int = 20000
    m_test: int = 1000
    train_seed: int = 1
    test_seed: int = 2

    def __post_init__(self):
        if self.m_train < 2 or self.m_test < 1:
            raise ConfigError("dataset sizes must satisfy m_train >= 2 and m_test >= 1")


@dataclass(frozen=True)
class EvalConfig:
    snr_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.snr_db:
            raise ConfigError("eval.snr_db must not be empty")
        if self.trials < 1:
            raise ConfigError("eval.trials must be >= 1")
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _section(cls, raw, name):
    raw = dict(raw or {})
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in section '{name}': {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"section '{name}': {exc}") from exc


def parse_run_config(data):
    data = dict(data or {})
    unknown = set(data) - {"system", "dataset", "train", "eval"}
    if unknown:
        raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
    train = dict(data.get("train") or {})
    if "train_snr_db" in train:
        if "train_sigma2" in train:
            raise ConfigError("give either train.train_snr_db or train.train_sigma2, not both")
        train["train_sigma2"] = 10.0 ** (-float(train.pop("train_snr_db")) / 10.0)
    return RunConfig(
        system=_section(SystemConfig, data.get("system"), "system"),
        dataset=_section(DatasetConfig, data.get("dataset"), "dataset"),
        train=_section(TrainConfig, train, "train"),
        eval=_section(EvalConfig, data.get("eval"), "eval"),
    )


def load_run_config(path):
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_run_config(data)
