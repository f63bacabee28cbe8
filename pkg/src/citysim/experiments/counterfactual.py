"""Even-income counterfactual: same agents and city, homes re-dealt evenly across blocks."""
from __future__ import annotations

import logging
from dataclasses import replace

from ..agents.engine import EprEngine
from ..environment import City
from ..metrics import MetricsReport, mean_std, segregation_index
from .config import RunConfig
from .population import quintile_population
from .runner import build_city, engine_config, save_summary_run, visits_by_quintile

log = logging.getLogger(__name__)


def segregation_of_run(city: City, profiles, cfg: RunConfig) -> dict[str, float]:
    engine = EprEngine(city, profiles, cfg.epr_params, cfg.seed, engine_config(cfg), record_memory=False,
                       decay_km=cfg.epr_decay_km)
    engine.run(cfg.days)
    by_id = {p.agent_id: p for p in profiles}
    trajs = [engine.trajectories[a] for a in sorted(engine.trajectories)]
    return segregation_index(visits_by_quintile(trajs, by_id, city))


def counterfactual_even_income(cfg: RunConfig, city: City | None = None) -> dict:
    """Per-block segregation for the original (income-mix) and even home assignments."""
    city = city or build_city(cfg)
    if cfg.n_agents < 5 * len(city.blocks):
        # fewer than five residents per block cannot hold all five quintiles
        log.warning("%d agents on %d blocks: even homes cannot mix every quintile in a block",
                    cfg.n_agents, len(city.blocks))
    out = {"n_agents": cfg.n_agents, "days": cfg.days, "seed": cfg.seed}
    for label, homes in (("original", "mix"), ("even", "even")):
        profiles = quintile_population(cfg.n_agents, city, cfg.seed, homes)
        seg = segregation_of_run(city, profiles, cfg)
        mean, std = mean_std(list(seg.values()))
        out[label] = {"mean": mean, "std": std, "per_block": seg}
    a, b = out["original"]["mean"], out["even"]["mean"]
    out["reduction"] = 1.0 - b / a if a > 0 else 0.0
    return out


def save_counterfactual(result: dict, cfg: RunConfig):
    per_block = [{"block": k, "s": v} for k, v in result["original"]["per_block"].items()]
    metrics = MetricsReport(per_block_segregation=per_block)
    return save_summary_run(replace(cfg, agent_kind="epr"), metrics, {"counterfactual.json": result})
