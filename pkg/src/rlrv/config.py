"""Run configuration loaded from a TOML file.

Every key is optional and lives at the top level or in one of the tables
``[simulate]``, ``[quality]``, ``[optimality]``, ``[timeliness]``; tables are
only for readability and are flattened on load.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .quality import QualityThresholds
from .timeliness import Scenario, TimelinessInputs

POLICIES = ("uniform", "schedule", "worst")
TARGET_POLICIES = ("trace", "uniform", "schedule")
ENVIRONMENTS = ("patrol", "random")
SECTIONS = ("simulate", "quality", "optimality", "timeliness")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # simulation
    environment: str = "patrol"
    policy: str = "uniform"
    n_transitions: int = 20000
    skip_probability: float = 0.2
    n_states: int = 4
    n_actions: int = 2
    seed: int = 0
    # shared
    discount: float = 0.5
    check_every: int = 500
    resamples: int = 500
    # quality
    max_bias_rel: float = 0.05
    max_sigma_rel: float = 0.02
    # optimality
    eta_lower_min: float = 0.5
    eta_upper_min: float = 0.7
    calibration_fraction: float = 0.05
    sigma_multiplier: float = 2.0
    # timeliness
    scenario: str = "new_policy"
    target_policy: str = "schedule"
    learning_rate: float = 0.75
    convergence_eps: float = 0.05
    negligibility: float = 0.0
    r_min: float = 0.0
    r_max: float = 3.0
    max_transitions: int = 100

    def __post_init__(self):
        checks = [
            (self.environment in ENVIRONMENTS, f"environment must be one of {ENVIRONMENTS}"),
            (self.policy in POLICIES, f"policy must be one of {POLICIES}"),
            (self.target_policy in TARGET_POLICIES, f"target_policy must be one of {TARGET_POLICIES}"),
            (self.scenario in {s.value for s in Scenario},
             f"scenario must be one of {[s.value for s in Scenario]}"),
            (self.n_transitions >= 1, "n_transitions must be at least 1"),
            (0.0 <= self.skip_probability <= 1.0, "skip_probability must lie in [0, 1]"),
            (self.n_states >= 1 and self.n_actions >= 1, "n_states and n_actions must be positive"),
            (self.seed >= 0, "seed must be non-negative"),
            (0.0 <= self.discount < 1.0, "discount must lie in [0, 1)"),
            (self.check_every >= 1, "check_every must be at least 1"),
            (self.resamples >= 100, "resamples must be at least 100"),
            (self.max_bias_rel > 0 and self.max_sigma_rel > 0, "quality thresholds must be positive"),
            (0.0 <= self.eta_lower_min <= 1.0 and 0.0 <= self.eta_upper_min <= 1.0,
             "eta thresholds must lie in [0, 1]"),
            (0.0 < self.calibration_fraction < 1.0, "calibration_fraction must lie in (0, 1)"),
            (self.sigma_multiplier > 0, "sigma_multiplier must be positive"),
            (0.0 < self.learning_rate <= 1.0, "learning_rate must lie in (0, 1]"),
            (self.convergence_eps > 0, "convergence_eps must be positive"),
            (self.negligibility >= 0, "negligibility must be non-negative"),
            (self.r_min <= self.r_max, "r_min must not exceed r_max"),
            (self.max_transitions >= 0, "max_transitions must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def quality(self) -> QualityThresholds:
        return QualityThresholds(self.max_bias_rel, self.max_sigma_rel)

    @property
    def timeliness(self) -> TimelinessInputs:
        return TimelinessInputs(self.learning_rate, self.discount, self.convergence_eps,
                                self.negligibility, self.r_min, self.r_max, self.max_transitions)

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


def _flatten(raw: dict) -> dict:
    flat = {}
    for key, value in raw.items():
        if key in SECTIONS and isinstance(value, dict):
            for k, v in value.items():
                if k in flat:
                    raise ConfigError(f"key {k!r} given more than once")
                flat[k] = v
        else:
            if key in flat:
                raise ConfigError(f"key {key!r} given more than once")
            flat[key] = value
    return flat


def config_from_dict(raw: dict) -> RunConfig:
    flat = _flatten(raw)
    types = {f.name: f.type for f in fields(RunConfig)}
    unknown = set(flat) - set(types)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    values = {}
    for key, value in flat.items():
        kind = types[key]
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer")
        elif kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number")
            value = float(value)
        elif kind == "str" and not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        values[key] = value
    return RunConfig(**values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw)
