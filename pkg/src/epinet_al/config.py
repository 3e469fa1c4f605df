"""Experiment configuration: YAML files layered over named presets.

A config file is a mapping with an optional ``preset`` key.  The preset's
values are filled in first and the file's keys override them, recursively for
nested sections.  Unknown keys are rejected; errors name the offending key
path, e.g. ``agents.epinet.prior_scale``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .active import ActiveConfig
from .baseline import (DEFAULT_BATCH_SIZES, DEFAULT_FRACTIONS, DEFAULT_L2_WEIGHTS,
                       DEFAULT_LEARNING_RATES, SweepGrid)
from .priority import PRIORITIES, PrioritySpec


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProblemConfig(_Strict):
    kind: Literal["generator", "features"] = "generator"
    input_dim: int = Field(10, ge=1)
    num_classes: int = Field(2, ge=2)
    temperature: float = Field(0.1, gt=0)
    hidden: int = Field(50, ge=1)
    depth: int = Field(2, ge=1)
    num_train: int = Field(200, ge=1)
    num_test: int = Field(1000, ge=1)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if self.kind == "features" and not self.path:
            raise ValueError("a features problem needs 'path'")
        if self.kind == "generator" and self.path:
            raise ValueError("'path' is only valid for a features problem")
        return self


class AgentConfig(_Strict):
    arch: Literal["mlp", "ensemble", "dropout", "epinet"]
    priorities: tuple[Literal["uniform", "entropy", "margin", "bald", "variance"], ...]
    hidden: tuple[int, ...] = (50, 50)
    l2: float = Field(0.0, ge=0)
    learning_rate: Optional[float] = Field(None, gt=0)
    ensemble_size: int = Field(10, ge=1)
    dropout_rate: float = Field(0.1, ge=0, lt=1)
    index_dim: int = Field(10, ge=1)
    epinet_hidden: tuple[int, ...] = (50, 50)
    prior_scale: float = Field(1.0, ge=0)


class ActiveSection(_Strict):
    candidate_batch: int = Field(200, ge=1)
    select_batch: int = Field(1, ge=1)
    index_samples: int = Field(10, ge=1)
    steps: int = Field(1000, ge=0)
    learning_rate: float = Field(1e-3, gt=0)
    b1: float = Field(0.9, ge=0, lt=1)
    b2: float = Field(0.95, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    clip_norm: Optional[float] = Field(1.0, gt=0)
    eval_every: int = Field(10, ge=1)
    label_milestone: int = Field(10, ge=0)
    eval_index_samples: int = Field(100, ge=1)
    replay: bool = False

    @model_validator(mode="after")
    def _batches(self):
        if self.select_batch > self.candidate_batch:
            raise ValueError("select_batch must not exceed candidate_batch")
        return self


class BaselineSection(_Strict):
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    batch_sizes: tuple[int, ...] = DEFAULT_BATCH_SIZES
    learning_rates: tuple[float, ...] = DEFAULT_LEARNING_RATES
    l2_weights: tuple[float, ...] = DEFAULT_L2_WEIGHTS
    epochs: int = Field(10, ge=0)
    seeds: int = Field(3, ge=1)
    hidden: tuple[int, ...] = (50, 50)

    @model_validator(mode="after")
    def _ranges(self):
        if not all(0 < f <= 1 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if not (self.fractions and self.batch_sizes and self.learning_rates and self.l2_weights):
            raise ValueError("sweep lists must be nonempty")
        return self


class ExperimentConfig(_Strict):
    preset: Optional[str] = None
    seed: int = Field(0, ge=0)
    seeds: int = Field(10, ge=1)
    output: str = "runs"
    match_metric: Literal["nll", "accuracy"] = "nll"
    problem: ProblemConfig = ProblemConfig()
    active: ActiveSection = ActiveSection()
    baseline: BaselineSection = BaselineSection()
    agents: dict[str, AgentConfig]

    @model_validator(mode="after")
    def _agents(self):
        if not self.agents:
            raise ValueError("at least one agent is required")
        for name in self.agents:
            if not name or "__" in name or "/" in name:
                raise ValueError(f"agent name {name!r} must be nonempty without '__' or '/'")
        return self

    # ---- conversions -------------------------------------------------------

    def active_config(self, agent: str, priority: str) -> ActiveConfig:
        a, ag = self.active, self.agents[agent]
        return ActiveConfig(
            candidate_batch=a.candidate_batch, select_batch=a.select_batch,
            index_samples=a.index_samples, steps=a.steps, l2=ag.l2,
            priority=PrioritySpec(priority, a.index_samples),
            learning_rate=ag.learning_rate or a.learning_rate,
            b1=a.b1, b2=a.b2, eps=a.eps, clip_norm=a.clip_norm, eval_every=a.eval_every,
            label_milestone=a.label_milestone, replay=a.replay)

    def sweep_grid(self) -> SweepGrid:
        b, a = self.baseline, self.active
        return SweepGrid(b.fractions, b.batch_sizes, b.learning_rates, b.l2_weights, b.epochs,
                         b.seeds, b.hidden, a.b1, a.b2, a.eps, a.clip_norm)

    def cells(self) -> list[tuple[str, str]]:
        return [(name, p) for name, ag in self.agents.items() for p in ag.priorities]

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# L2 weights chosen by scripts/tune_l2.py on problems from a different master seed
_TESTBED_AGENTS = {
    "mlp": {"arch": "mlp", "priorities": ["uniform", "entropy", "margin"], "l2": 1e-3},
    "ensemble": {"arch": "ensemble", "priorities": ["variance"], "l2": 1e-4},
    "dropout": {"arch": "dropout", "priorities": ["variance"], "l2": 3e-2},
    "epinet": {"arch": "epinet", "priorities": list(PRIORITIES), "l2": 1e-2},
}

PRESETS: dict[str, dict] = {
    "testbed-default": {
        "seeds": 10,
        "output": "runs/testbed",
        "match_metric": "nll",
        "problem": {"kind": "generator", "input_dim": 10, "num_classes": 2,
                    "temperature": 0.1, "num_train": 200, "num_test": 1000},
        "active": {"candidate_batch": 200, "select_batch": 1, "index_samples": 10,
                   "learning_rate": 1e-3},
        "agents": _TESTBED_AGENTS,
    },
    "bert-head-surrogate": {
        "seeds": 10,
        "output": "runs/bert-head",
        "match_metric": "accuracy",
        "problem": {"kind": "features"},
        "active": {"candidate_batch": 40, "select_batch": 4, "index_samples": 10,
                   "learning_rate": 1e-5},
        "baseline": {"l2_weights": [0.0]},
        "agents": {
            "baseline": {"arch": "mlp", "priorities": ["uniform", "entropy", "margin"]},
            "dropout": {"arch": "dropout", "priorities": ["variance"]},
            "ensemble": {"arch": "ensemble", "priorities": ["variance"]},
            "epinet": {"arch": "epinet", "priorities": ["uniform", "bald", "variance"]},
        },
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _format(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>: config must be a mapping")
    preset = raw.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        raw = _merge(PRESETS[preset], raw)
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(_format(err)) from None
    if cfg.problem.path is not None:
        p = Path(cfg.problem.path)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"problem.path: file not found: {p}")
        cfg = cfg.model_copy(update={"problem": cfg.problem.model_copy(update={"path": str(p)})})
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: not valid YAML ({err})") from None
    return config_from_dict(raw if raw is not None else {}, path.parent)


def preset_config(name: str, **overrides) -> ExperimentConfig:
    return config_from_dict(_merge({"preset": name}, overrides))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.canonical(), sort_keys=False)


__all__ = ["ConfigError", "ExperimentConfig", "AgentConfig", "ProblemConfig", "ActiveSection",
           "BaselineSection", "PRESETS", "parse_config", "config_from_dict", "preset_config",
           "dump_config"]
