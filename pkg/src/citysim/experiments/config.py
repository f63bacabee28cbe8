"""Run configuration: JSON file plus command-line overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..agents.epr import EprParams
from ..backends.latency import LatencyModel
from ..errors import ConfigError, ConfigMismatch
from ..optimizer.strategies import METHODS

# keys a benchmark baseline may change; everything else defines the workload
OPTIMIZATION_KEYS = frozenset({"optimizer", "scheduler", "reuse_connections", "offload",
                               "pool_capacity", "worker_count"})


@dataclass
class RunConfig:
    city: str | None = None
    synthetic_city: dict = field(default_factory=lambda: {
        "n_blocks": 100, "pois_per_block": 8, "segregation_level": 0.6, "seed": 0})
    n_agents: int = 100
    agent_kind: str = "generative"
    population: str = "archetypes"
    n_archetypes: int = 20
    census: str | None = None
    homes: str = "mix"
    optimizer: str = "group_distill"
    backend: str = "mock"
    seed: int = 0
    days: float = 1.0
    latency: dict = field(default_factory=lambda: LatencyModel().to_dict())
    ipl_M: int = 20
    ipl_T: float = 0.7
    batch_cap: int = 16
    pool_capacity: int = 8
    reuse_connections: bool = True
    worker_count: int = 4
    scheduler: str = "async"
    offload: bool = True
    epr: dict = field(default_factory=lambda: EprParams().to_dict())
    # exploration weight exp(-d/epr_decay_km) around home; None explores uniformly
    epr_decay_km: float | None = None
    tick_minutes: int = 15
    perception_radius_km: float = 1.0
    candidate_cap: int = 10
    memory_excerpt: int = 3
    reflect_threshold: float = 20
    spatial_query_cost: float = 0.0005
    start_date: str = "2025-01-06"
    http_url: str = "http://127.0.0.1:8000/v1/chat/completions"
    http_model: str = "gpt-4o-mini"
    temperature: float = 0.0
    run_root: str = "runs"

    def validate(self) -> "RunConfig":
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        if self.agent_kind not in ("generative", "epr"):
            raise ConfigError(f"agent_kind must be generative or epr, not {self.agent_kind!r}")
        if self.optimizer not in METHODS:
            raise ConfigError(f"optimizer must be one of {METHODS}")
        if self.backend not in ("mock", "http"):
            raise ConfigError("backend must be mock or http")
        if self.population not in ("archetypes", "census", "quintiles"):
            raise ConfigError("population must be archetypes, census or quintiles")
        if self.population == "census" and not self.census:
            raise ConfigError("population=census needs a census file")
        if self.homes not in ("mix", "even"):
            raise ConfigError("homes must be mix or even")
        if self.days <= 0:
            raise ConfigError("days must be positive")
        for ref in (self.city, self.census):
            if ref and not Path(ref).exists():
                raise ConfigError(f"referenced file {ref} does not exist")
        if self.scheduler not in ("async", "sequential"):
            raise ConfigError("scheduler must be async or sequential")
        try:
            LatencyModel.from_dict(self.latency)
            EprParams(**self.epr)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if self.epr_decay_km is not None and self.epr_decay_km <= 0:
            raise ConfigError("epr_decay_km must be positive")
        if not 0 < self.ipl_T < 1 or self.ipl_M < 1:
            raise ConfigError("ipl_M must be >= 1 and ipl_T in (0, 1)")
        return self

    @property
    def latency_model(self) -> LatencyModel:
        return LatencyModel.from_dict(self.latency)

    @property
    def epr_params(self) -> EprParams:
        return EprParams(**self.epr)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def override(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def baseline_of(cfg: RunConfig) -> RunConfig:
    """The unoptimized counterpart: raw prompts, sequential dispatch, no reuse or offload."""
    return replace(cfg, optimizer="raw", scheduler="sequential", reuse_connections=False,
                   offload=False)


def check_comparable(cfg: RunConfig, baseline: RunConfig) -> None:
    a, b = cfg.to_dict(), baseline.to_dict()
    diff = sorted(k for k in a if a[k] != b[k] and k not in OPTIMIZATION_KEYS)
    if diff:
        raise ConfigMismatch(f"benchmark configs differ outside optimization flags: {diff}")
