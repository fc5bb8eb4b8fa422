"""Experiment configuration: defaults < JSON file < command-line overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .signals import DatasetSplit


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # features
    w: int = 256
    source_channels: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    target_channels: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    clip_cap: float = 10.0
    # splits of the target healthy record
    da_fraction: float = 0.1
    tune_fraction: float = 0.4
    test_fraction: float = 0.5
    # adaptation
    epsilon: float = 1e-12
    clip_transformed: bool = False
    # detection
    score_cap: float = 40.0
    # training
    seed: int = 0
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    max_iterations: int = 5000
    eval_interval: int = 25
    patience: int = 200
    validation_fraction: float = 0.2
    lstm_hidden: int = 64
    head_hidden: int = 128
    lstm_steps: int | None = None
    generator_hidden: list[int] = field(default_factory=lambda: [256, 1024, 3750])
    # data; either a dataset directory with manifest.json or explicit CSV paths
    dataset: str | None = None
    source_healthy: str | None = None
    source_damage: list[str] = field(default_factory=list)
    target_healthy: str | None = None
    target_damage: list[str] = field(default_factory=list)
    # synthetic fixture
    synth_damage_factors: list[float] = field(default_factory=lambda: [0.9, 0.7, 0.5])
    synth_damage_story: int = 0
    synth_source_healthy_s: float = 600.0
    synth_source_damage_s: float = 120.0
    synth_target_healthy_s: float = 200.0
    synth_target_damage_s: float = 60.0
    # outputs
    out_dir: str = "runs/default"
    workers: int = 4

    @property
    def n(self) -> int:
        return len(self.source_channels)

    @property
    def split(self) -> DatasetSplit:
        return DatasetSplit(self.da_fraction, self.tune_fraction, self.test_fraction)

    def validate(self) -> "ExperimentConfig":
        if not isinstance(self.w, int) or self.w < 2 or self.w % 2:
            raise ConfigError(f"w must be an even positive integer, got {self.w!r}")
        if not self.source_channels:
            raise ConfigError("source_channels is empty")
        if len(self.source_channels) != len(self.target_channels):
            raise ConfigError(
                f"source and target must use the same number of channels "
                f"({len(self.source_channels)} vs {len(self.target_channels)})"
            )
        try:
            self.split
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for f in self.synth_damage_factors:
            if not 0 < f < 1:
                raise ConfigError(f"damage factor must lie in (0, 1), got {f}")
        if self.clip_cap <= 0 or self.score_cap <= 0:
            raise ConfigError("clip_cap and score_cap must be positive")
        if self.max_iterations < 1 or self.eval_interval < 1 or self.batch_size < 1:
            raise ConfigError("max_iterations, eval_interval and batch_size must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """sha256 of the settings that influence results (output location excluded)."""
        d = self.to_json()
        d.pop("out_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    for key, value in overrides.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    return cfg


def parse_assignment(text: str) -> tuple[str, object]:
    """'key=value' with value parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().replace("-", "_"), value


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        apply_overrides(cfg, data)
    apply_overrides(cfg, overrides or {})
    return cfg.validate()
