"""Experiment configuration: packaged defaults, optional user file, CLI overrides."""

from __future__ import annotations

import copy
from enum import StrEnum
from functools import lru_cache
from pathlib import Path
from typing import Any, Self, cast

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from bdy.core import ModelParams
from bdy.errors import ConfigError

__all__ = [
    "ExperimentConfig",
    "LinearizedBlock",
    "OdeBlock",
    "OutputFormat",
    "SimBlock",
    "SweepBlock",
    "VerifyBlock",
    "load_config",
    "load_defaults",
]


class OutputFormat(StrEnum):
    CSV = "csv"
    JSON = "json"


class _Block(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SimBlock(_Block):
    t_end: float = Field(ge=0)
    record_times: tuple[float, ...] = ()
    replicas: int = Field(default=1, ge=1)
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _records_inside(self) -> Self:
        times = self.record_times
        outside = bool(times) and (times[0] < 0 or times[-1] > self.t_end)
        if list(times) != sorted(times) or outside:
            msg = f"record_times must be sorted inside [0, {self.t_end}]"
            raise ValueError(msg)
        return self


class OdeBlock(_Block):
    n_max: int | None = Field(default=500, ge=1)
    dt: float = Field(gt=0)
    t_end: float = Field(ge=0)
    observe_every: int = Field(default=100, ge=1)


class SweepBlock(_Block):
    mu_values: tuple[float, ...]
    n_h_values: tuple[float, ...]
    points: int = Field(ge=0)
    gamma_max: float = Field(ge=0, lt=1)

    def gamma_grid(self) -> list[float]:
        return [float(g) for g in np.linspace(0.0, self.gamma_max, self.points)]


class LinearizedBlock(_Block):
    trials: int = Field(ge=0)
    t_end: float = Field(ge=0)
    dt: float = Field(gt=0)
    observe_every: int = Field(default=1, ge=1)


class VerifyBlock(_Block):
    h_max_trials: int = Field(ge=1)
    poincare_trials: int = Field(ge=1)
    dissipation_trials: int = Field(ge=1)
    abm_agents: int = Field(ge=2)
    abm_t_end: float = Field(gt=0)
    ode_t_end: float = Field(gt=0)
    ensemble_replicas: int = Field(default=100, ge=1)
    ensemble_t_end: float = Field(default=20.0, gt=0)


class ExperimentConfig(BaseModel):
    """All blocks validated up front, before any run starts."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(ge=0, lt=2**64)
    out: Path
    format: OutputFormat
    model: ModelParams
    sim: SimBlock
    ode: OdeBlock
    sweep: SweepBlock
    linearized: LinearizedBlock
    verify: VerifyBlock


@lru_cache(maxsize=1)
def _load_defaults_mapping() -> dict[str, Any]:
    """Packaged defaults from YAML (cached)."""
    path = Path(__file__).parent / "defaults.yaml"
    result = yaml.safe_load(path.read_text(encoding="utf-8"))
    return cast("dict[str, Any]", result)


def load_defaults() -> dict[str, Any]:
    return copy.deepcopy(_load_defaults_mapping())


def _read_config_file(path: Path) -> dict[str, Any]:
    # JSON is a subset of YAML, so one loader serves both
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as e:
        msg = f"cannot read config {path}: {e}"
        raise ConfigError(msg) from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        msg = f"config {path} must hold an object at the top level"
        raise ConfigError(msg)
    return cast("dict[str, Any]", data)


def _merge(
    base: dict[str, Any], override: dict[str, Any], *, skip_none: bool = False
) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if value is None and skip_none:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value, skip_none=skip_none)
        else:
            merged[key] = value
    return merged


def load_config(
    path: Path | None = None, overrides: dict[str, Any] | None = None
) -> ExperimentConfig:
    """Defaults, then the user file, then ``overrides``.

    ``None`` in ``overrides`` means "flag not given" and is skipped.

    Raises:
        ConfigError: the file cannot be read or is not a mapping.
        pydantic.ValidationError: a merged value is out of range.
    """
    data = load_defaults()
    if path is not None:
        data = _merge(data, _read_config_file(path))
    if overrides:
        data = _merge(data, overrides, skip_none=True)
    return ExperimentConfig.model_validate(data)
