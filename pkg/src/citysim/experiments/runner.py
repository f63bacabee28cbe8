"""Build, execute and persist a simulation run."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from ..agents.engine import EngineConfig, EprEngine, GenerativeEngine
from ..agents.state import write_trajectories
from ..backends.http import HttpBackend
from ..backends.mock import MockBackend
from ..environment import City, gen_synthetic_city
from ..gateway.core import Gateway, GatewayConfig, LlmClient
from ..gateway.types import GatewayStats
from ..ingest import CensusMarginals, sample_profiles
from ..metrics import MetricsReport, segregation_index
from ..optimizer.distill import distill_meta_prompt
from ..optimizer.ipl import Grouping, IplConfig, run_ipl
from ..optimizer.strategies import Decider
from ..profile import StaticProfile
from .. import prompts as P
from .config import RunConfig
from .population import archetype_population, quintile_population, with_homes

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    config: RunConfig
    stats: GatewayStats
    setup_stats: GatewayStats
    metrics: MetricsReport
    city: City
    engine: object = None
    grouping: Grouping | None = None
    path: Path | None = None
    extra: dict = field(default_factory=dict)

    @property
    def trajectories(self):
        return list(self.engine.trajectories.values()) if self.engine else []


# -- builders ------------------------------------------------------------------------


def build_city(cfg: RunConfig) -> City:
    if cfg.city:
        return City.load(cfg.city)
    sc = cfg.synthetic_city
    return gen_synthetic_city(int(sc["n_blocks"]), int(sc["pois_per_block"]),
                              float(sc["segregation_level"]), int(sc.get("seed", 0)))


def build_population(cfg: RunConfig, city: City) -> list[StaticProfile]:
    if cfg.population == "archetypes":
        return archetype_population(cfg.n_agents, city, cfg.seed, cfg.n_archetypes, cfg.homes)
    if cfg.population == "quintiles":
        return quintile_population(cfg.n_agents, city, cfg.seed, cfg.homes)
    census = CensusMarginals.from_dict(json.loads(Path(cfg.census).read_text()))
    profiles = sample_profiles(census, cfg.n_agents, cfg.seed)
    return with_homes(profiles, city, np.random.default_rng(cfg.seed), cfg.homes)


def build_backend(cfg: RunConfig, **mock_options):
    if cfg.backend == "mock":
        return MockBackend(cfg.latency_model, cfg.seed, **mock_options)
    return HttpBackend(cfg.http_url, cfg.http_model, cfg.temperature)


def build_gateway(cfg: RunConfig, backend) -> Gateway:
    gcfg = GatewayConfig(pool_capacity=cfg.pool_capacity, reuse_connections=cfg.reuse_connections,
                         worker_count=cfg.worker_count, scheduler=cfg.scheduler, offload=cfg.offload)
    return Gateway(backend, gcfg, clock="virtual" if cfg.backend == "mock" else "real")


def engine_config(cfg: RunConfig) -> EngineConfig:
    return EngineConfig(tick_minutes=cfg.tick_minutes, perception_radius_km=cfg.perception_radius_km,
                        candidate_cap=cfg.candidate_cap, memory_excerpt=cfg.memory_excerpt,
                        reflect_threshold=cfg.reflect_threshold,
                        spatial_query_cost=cfg.spatial_query_cost, start_date=cfg.start_date)


def sample_choice_prompt(profile: StaticProfile) -> P.RawPrompt:
    """A representative location-choice prompt used to derive the distill template."""
    return P.choice_prompt(profile, {"time": "day 1 08:30", "attempt": 0,
                                     "location": "P0 (residence) in block 0_0",
                                     "intention": "work (work)", "memory": P.NO_CONTEXT,
                                     "candidates": "P0 work 0.10km; P1 work 0.25km"})


def prepare_decider(cfg: RunConfig, profiles, gateway: Gateway) -> tuple[Decider, Grouping | None]:
    """IPL grouping and the distill template, issued as setup traffic."""
    setup = LlmClient(gateway, prefix="s")
    grouping = meta = None
    if cfg.optimizer in ("archetype", "group_distill"):
        grouping = run_ipl(profiles, IplConfig(cfg.ipl_M, cfg.ipl_T), setup)
    if cfg.optimizer == "group_distill":
        meta = distill_meta_prompt(sample_choice_prompt(profiles[0]), setup)
    return Decider(cfg.optimizer, LlmClient(gateway), grouping, meta, cfg.batch_cap), grouping


# -- metrics ---------------------------------------------------------------------------


def visits_by_quintile(trajectories, profiles: dict, city: City):
    for traj in trajectories:
        q = profiles[traj.agent_id].income_quintile
        for _, poi in traj.points:
            yield city.poi(poi).block_id, q


def run_metrics(engine, city: City) -> MetricsReport:
    trajs = [engine.trajectories[a] for a in sorted(engine.trajectories)]
    profiles = {a: s.static for a, s in engine.states.items()}
    seg = segregation_index(visits_by_quintile(trajs, profiles, city))
    return MetricsReport(per_block_segregation=[{"block": b, "s": s} for b, s in seg.items()])


def block_sequences(trajectories, city: City):
    return [[city.poi(p).block_id for _, p in t.points] for t in trajectories]


# -- execution ---------------------------------------------------------------------------


def simulate(cfg: RunConfig, persist: bool = True, **mock_options) -> RunRecord:
    cfg.validate()
    city = build_city(cfg)
    profiles = build_population(cfg, city)
    ecfg = engine_config(cfg)
    if cfg.agent_kind == "epr":
        engine = EprEngine(city, profiles, cfg.epr_params, cfg.seed, ecfg, decay_km=cfg.epr_decay_km)
        engine.run(cfg.days)
        empty = GatewayStats()
        record = RunRecord(cfg, empty, empty, run_metrics(engine, city), city, engine)
    else:
        backend = build_backend(cfg, **mock_options)
        gateway = build_gateway(cfg, backend)
        try:
            decider, grouping = prepare_decider(cfg, profiles, gateway)
            setup_stats = gateway.gateway_stats()
            engine = GenerativeEngine(city, profiles, decider.llm, decider, ecfg, gateway)
            engine.run(cfg.days)
            gateway.shutdown()
            stats = gateway.gateway_stats() - setup_stats
        finally:
            gateway.shutdown(wait=False)
        engine.events.extend(decider.events)
        record = RunRecord(cfg, stats, setup_stats, run_metrics(engine, city), city, engine, grouping)
        record.extra.update(plan_fallbacks=engine.plan_fallbacks, failed_steps=engine.failed_steps,
                            reflections=engine.reflections, arity_fallback_agents=decider.fallback_agents,
                            reused_answers=decider.reused_answers)
    if persist:
        save_run(record)
    return record


def new_run_dir(root, seed: int) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    base = f"{datetime.now().strftime('%Y%m%dT%H%M%S')}-{seed}"
    path, k = root / base, 1
    while path.exists():
        k += 1
        path = root / f"{base}-{k}"
    path.mkdir()
    return path


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def save_run(record: RunRecord, path: Path | None = None) -> Path:
    path = path or new_run_dir(record.config.run_root, record.config.seed)
    record.path = path
    record.config.save(path / "config.json")
    record.city.save(path / "city.json")
    _dump(path / "stats.json", record.stats.to_dict())
    _dump(path / "setup_stats.json", record.setup_stats.to_dict())
    _dump(path / "metrics.json", record.metrics.to_dict())
    if record.extra:
        _dump(path / "run_info.json", record.extra)
    engine = record.engine
    write_trajectories(path / "trajs.jsonl", engine.trajectories.values(), record.city, engine.cfg.start)
    _dump(path / "groups.json", record.grouping.to_json() if record.grouping else [])
    if record.grouping:
        _dump(path / "ipl_likelihoods.json", record.grouping.likelihood_log)
    with open(path / "events.jsonl", "w") as fh:
        for ev in engine.events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
    with open(path / "agents.jsonl", "w") as fh:
        for aid in sorted(engine.states):
            s = engine.states[aid]
            fh.write(json.dumps({"profile": s.static.to_dict(), "home": s.home,
                                 "memory": [e.to_dict() for e in s.memory.entries]}, sort_keys=True) + "\n")
    return path


def save_summary_run(cfg: RunConfig, metrics: MetricsReport, files: dict) -> Path:
    """Run directory for experiments that produce no trajectories of their own."""
    path = new_run_dir(cfg.run_root, cfg.seed)
    cfg.save(path / "config.json")
    _dump(path / "metrics.json", metrics.to_dict())
    for name, obj in files.items():
        _dump(path / name, obj)
    return path


def load_agents(path) -> dict:
    """``agent_id -> {"profile": StaticProfile, "memory": [entry dicts]}`` from a run directory."""
    out = {}
    with open(Path(path) / "agents.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            p = StaticProfile.from_dict(rec["profile"])
            out[p.agent_id] = {"profile": p, "memory": rec["memory"], "home": rec.get("home")}
    return out
