"""Strict JSON run configuration.

Unknown keys anywhere in a config file are rejected so that a typo cannot
silently fall back to a default. Relative config paths that do not exist are
looked up in the directory named by ``EPSFP_CONFIG_DIR``.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .cnn import TrainConfig
from .dataset import ScenarioSpec
from .errors import ValidationError
from .waveform import DeviceProfile, cfo_magnitude_grid, default_population

CONFIG_DIR_ENV = "EPSFP_CONFIG_DIR"


def _strict(cls, d, where: str):
    if not isinstance(d, dict):
        raise ValidationError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")
    return d


@dataclass(frozen=True)
class PopulationConfig:
    n_devices: int = 15
    seed: int = 2024
    cfo_min_hz: float = 2e3
    cfo_max_hz: float = 25e3
    cfo_step_hz: float = 1.5e3
    gain_imbalance_db: float = 0.5
    phase_imbalance_deg: float = 2.0
    max_dc_offset: float = 0.01
    phase_noise_std_rad: float = 1e-4

    def build(self) -> list[DeviceProfile]:
        return default_population(self.n_devices, self.seed,
                                  cfo_magnitude_grid(self.cfo_min_hz, self.cfo_max_hz, self.cfo_step_hz),
                                  self.gain_imbalance_db, self.phase_imbalance_deg, self.max_dc_offset,
                                  self.phase_noise_std_rad)


@dataclass(frozen=True)
class RunConfig:
    population: PopulationConfig = field(default_factory=PopulationConfig)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    frames_per_device: int = 100
    seed: int = 1
    folds: int = 5
    cross_domain_models: int = 5
    models: tuple[str, ...] = ("nearest_centroid",)
    train_domains: tuple[str, ...] = ()
    test_domains: tuple[str, ...] = ()

    def __post_init__(self):
        if self.frames_per_device < 1:
            raise ValidationError("frames_per_device must be positive")
        if self.folds < 1 or self.cross_domain_models < 1:
            raise ValidationError("folds and cross_domain_models must be positive")
        from .evaluation import MODEL_KINDS

        for m in self.models:
            if m not in MODEL_KINDS:
                raise ValidationError(f"unknown model {m!r}; expected one of {MODEL_KINDS}")

    def to_dict(self) -> dict:
        return {
            "population": dataclasses.asdict(self.population),
            "scenario": self.scenario.to_dict(),
            "train": dataclasses.asdict(self.train),
            "frames_per_device": self.frames_per_device,
            "seed": self.seed,
            "folds": self.folds,
            "cross_domain_models": self.cross_domain_models,
            "models": list(self.models),
            "train_domains": list(self.train_domains),
            "test_domains": list(self.test_domains),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(_strict(cls, d, "config"))
        if "population" in d:
            d["population"] = PopulationConfig(**_strict(PopulationConfig, d["population"], "population"))
        if "scenario" in d:
            d["scenario"] = ScenarioSpec.from_dict(_strict(ScenarioSpec, d["scenario"], "scenario"))
        if "train" in d:
            d["train"] = TrainConfig(**_strict(TrainConfig, d["train"], "train"))
        for k in ("models", "train_domains", "test_domains"):
            if k in d:
                if not isinstance(d[k], list):
                    raise ValidationError(f"{k} must be a list")
                d[k] = tuple(d[k])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(str(exc)) from None

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


def resolve_config_path(path: str | Path) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get(CONFIG_DIR_ENV)
    if base and (Path(base) / p).exists():
        return Path(base) / p
    return p


def load_config(path: str | Path) -> RunConfig:
    p = resolve_config_path(path)
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(raw)
