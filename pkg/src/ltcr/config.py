"""Experiment configuration: YAML on disk, validated pydantic models in memory.

Unknown keys are rejected at every level.  Agent, evaluation and replay
defaults depend on the environment, so anything left unset is filled from
`ENV_DEFAULTS` before validation.
"""
from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .agent import AgentConfig, EpsilonSchedule
from .envs.spacebattle import SpaceBattleConfig
from .errors import ConfigError
from .protocol import PRESETS, PhaseSchedule

ENV_DEFAULTS: dict[str, dict[str, dict[str, Any]]] = {
    "cartpole": {
        "agent": {"v_min": 0.0, "v_max": 200.0, "hidden": [64, 64], "replay_capacity": 50_000},
        "evaluation": {"interval": 100, "smoothing_window": 500},
    },
    "spacebattle": {
        "agent": {"v_min": -25.0, "v_max": 75.0, "hidden": [128, 128], "replay_capacity": 200_000},
        "evaluation": {"interval": 1_000, "smoothing_window": 1_000},
    },
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnvSection(_Strict):
    kind: Literal["cartpole", "spacebattle"] = "cartpole"
    spacebattle: dict[str, Any] = Field(default_factory=dict)

    @field_validator("spacebattle")
    @classmethod
    def _known_keys(cls, v: dict[str, Any]) -> dict[str, Any]:
        known = {f.name for f in dataclasses.fields(SpaceBattleConfig)} - {"team_size"}
        unknown = set(v) - known
        if unknown:
            raise ValueError(f"unknown spacebattle keys: {sorted(unknown)}")
        return v


class AgentSection(_Strict):
    v_min: float
    v_max: float
    atoms: int = Field(51, ge=2)
    hidden: list[int]
    lr: float = Field(1e-4, gt=0)
    gamma: float = Field(0.99, ge=0, le=1)
    batch_size: int = Field(32, ge=1)
    replay_capacity: int = Field(ge=1)
    target_sync_interval: int = Field(500, ge=1)
    warmup: int = Field(1_000, ge=0)
    epsilon_start: float = Field(1.0, ge=0, le=1)
    epsilon_end: float = Field(0.01, ge=0, le=1)
    epsilon_decay_fraction: float = Field(0.1, ge=0, le=1)
    epsilon_eval: float = Field(0.001, ge=0, le=1)

    @model_validator(mode="after")
    def _bounds(self) -> "AgentSection":
        if self.v_min >= self.v_max:
            raise ValueError("agent.v_min must be < agent.v_max")
        return self


class ProtocolSection(_Strict):
    subset_size: int = Field(64, ge=1)
    upload_rate: float = Field(0.1, ge=0, le=1)
    memory_capacity: int = Field(10_000, ge=1)
    probe_size: int = Field(256, ge=1)


class EvaluationSection(_Strict):
    interval: int = Field(ge=1)
    episodes: int = Field(1, ge=1)
    smoothing_window: int = Field(ge=1)


class ExperimentConfig(_Strict):
    name: str = "experiment"
    env: EnvSection = Field(default_factory=EnvSection)
    team_size: int = Field(2, ge=1)
    schedule: str = "9-1"
    schedule_unit: int = Field(1, ge=1)
    explore_frames: int = Field(10, ge=1)
    comm_period: int = Field(1_000, ge=1)
    total_frames: int = Field(100_000, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [0])
    agent: AgentSection
    protocol: ProtocolSection = Field(default_factory=ProtocolSection)
    evaluation: EvaluationSection
    output_dir: str = "runs"
    workers: int = Field(1, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _fill_env_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        env = data.get("env") or {}
        kind = env.get("kind", "cartpole") if isinstance(env, dict) else "cartpole"
        defaults = ENV_DEFAULTS.get(kind, ENV_DEFAULTS["cartpole"])
        for section, values in defaults.items():
            given = data.get(section) or {}
            if isinstance(given, dict):
                data[section] = {**values, **given}
        return data

    @field_validator("schedule")
    @classmethod
    def _schedule_name(cls, v: str) -> str:
        PhaseSchedule.from_preset(v)
        return v

    @model_validator(mode="after")
    def _cadence(self) -> "ExperimentConfig":
        if self.evaluation.interval % self.explore_frames:
            raise ValueError("evaluation.interval must be a multiple of explore_frames")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        return self

    # -- derived objects -----------------------------------------------------

    def phase_schedule(self) -> PhaseSchedule:
        return PhaseSchedule.from_preset(
            self.schedule,
            unit=self.schedule_unit,
            explore_frames=self.explore_frames,
            comm_period=self.comm_period,
        )

    @property
    def schedule_label(self) -> str:
        s = self.phase_schedule()
        if s.digest_steps == 0:
            return "baseline"
        return self.schedule if self.schedule in PRESETS else f"{s.revisit_steps}-{s.digest_steps}"

    def agent_config(self) -> AgentConfig:
        a = self.agent
        return AgentConfig(
            v_min=a.v_min,
            v_max=a.v_max,
            atoms=a.atoms,
            hidden=tuple(a.hidden),
            lr=a.lr,
            gamma=a.gamma,
            batch_size=a.batch_size,
            replay_capacity=a.replay_capacity,
            target_sync_interval=a.target_sync_interval,
            warmup=a.warmup,
            epsilon=EpsilonSchedule(
                start=a.epsilon_start,
                end=a.epsilon_end,
                horizon=int(round(a.epsilon_decay_fraction * self.total_frames)),
                evaluation=a.epsilon_eval,
            ),
        )

    def spacebattle_config(self) -> SpaceBattleConfig:
        try:
            return SpaceBattleConfig(team_size=self.team_size, **self.env.spacebattle)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def parse_config(data: dict[str, Any]) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.env.kind == "spacebattle":
        cfg.spacebattle_config()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a YAML config; ``LTCR_OUTPUT_DIR`` and ``LTCR_WORKERS`` override the file."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if os.environ.get("LTCR_OUTPUT_DIR"):
        data["output_dir"] = os.environ["LTCR_OUTPUT_DIR"]
    if os.environ.get("LTCR_WORKERS"):
        data["workers"] = os.environ["LTCR_WORKERS"]
    return parse_config(data)
