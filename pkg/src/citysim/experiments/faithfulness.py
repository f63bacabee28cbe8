"""Answer-distribution drift of each prompt optimizer against raw per-agent prompts.

Every agent faces one fixed decision (candidates around its home, a fixed
intention) ``reps`` times; the repetition index is passed as ``attempt`` so
the oracle draws afresh. Each method's answers are compared per agent with
the raw answers from the same backend seed.
"""
from __future__ import annotations

import logging

from ..agents.engine import home_poi, parse_choice
from ..backends.mock import MockBackend
from ..environment import City, gen_synthetic_city
from ..gateway.core import Gateway, GatewayConfig
from ..metrics import MetricsReport, empirical, jsd, mean_std, reference_mode, top1_hit_rate
from ..optimizer.strategies import ChoiceRequest
from .. import prompts as P
from .config import RunConfig
from .population import archetype_population
from .runner import prepare_decider, save_summary_run

log = logging.getLogger(__name__)

CONTEXT_RADIUS_KM = 1.5
CONTEXT_CAP = 10
INTENTIONS = (("lunch", "food"), ("errands", "shopping"), ("free time", "leisure"),
              ("appointment", "health"), ("errands", "service"))


def fixed_contexts(city: City, profiles, cap: int = CONTEXT_CAP) -> dict:
    """One decision context per agent: venues closest to its home and an intention."""
    out = {}
    for p in profiles:
        home = home_poi(city, p)
        loc = city.poi(home).loc
        radius = CONTEXT_RADIUS_KM
        while True:
            hits = [(poi.poi_id, poi.category, d) for d, poi in
                    city.nearby_pois(loc, radius, with_distance=True) if poi.category != "residence"]
            if len(hits) >= min(cap, len(city.pois) - len(city.pois_of_category("residence"))):
                break
            radius *= 2
        activity, category = INTENTIONS[p.agent_id % len(INTENTIONS)]
        out[p.agent_id] = {
            "time": "day 1 12:00",
            "location": f"{home} (residence) in block {p.home_block}",
            "intention": f"{activity} ({category})",
            "memory": P.NO_CONTEXT,
            "candidates": P.render_candidates(hits[:cap]),
        }
    return out


def _selection(answer) -> str:
    if isinstance(answer, Exception) or answer is None:
        return "none"
    try:
        return parse_choice(answer)[0]
    except ValueError:
        return "none"


def collect_answers(method: str, profiles, contexts: dict, reps: int, seed: int,
                    cfg: RunConfig | None = None):
    """Raw answer texts per agent over ``reps`` repetitions; also the decider and gateway stats."""
    cfg = (cfg or RunConfig()).override(optimizer=method, seed=seed)
    gw = Gateway(MockBackend(cfg.latency_model, seed),
                 GatewayConfig(pool_capacity=cfg.pool_capacity), clock="virtual")
    try:
        decider, grouping = prepare_decider(cfg, profiles, gw)
        setup = gw.gateway_stats()
        answers = {p.agent_id: [] for p in profiles}
        for rep in range(reps):
            requests = [ChoiceRequest(p, {**contexts[p.agent_id], "attempt": rep}) for p in profiles]
            for aid, text in decider.decide(requests).items():
                answers[aid].append(text)
        gw.shutdown()
        return answers, decider, grouping, gw.gateway_stats() - setup
    finally:
        gw.shutdown(wait=False)


def compare(answers: dict, reference: dict) -> dict:
    """Per-agent JSD and top-1 agreement of ``answers`` against ``reference``."""
    per_agent, modal, t1_reps, exact, total = {}, {}, [], 0, 0
    for aid in sorted(reference):
        ref_sel = [_selection(a) for a in reference[aid]]
        sel = [_selection(a) for a in answers[aid]]
        ref_dist, dist = empirical(ref_sel), empirical(sel)
        per_agent[aid] = jsd(dist, ref_dist)
        t1_reps.append(top1_hit_rate(sel, ref_dist))
        modal[aid] = reference_mode(dist) == reference_mode(ref_dist)
        exact += sum(a == b for a, b in zip(answers[aid], reference[aid]))
        total += len(reference[aid])
    mean, std = mean_std(list(per_agent.values()))
    return {"jsd_mean": mean, "jsd_std": std, "t1": 100.0 * sum(modal.values()) / len(modal),
            "t1_reps": float(sum(t1_reps) / len(t1_reps)), "exact_match": exact / total,
            "per_agent_jsd": per_agent, "per_agent_modal_hit": modal}


def faithfulness_experiment(methods=("batch", "archetype", "group_distill"), n_agents: int = 100,
                            reps: int = 100, seed: int = 0, city: City | None = None,
                            cfg: RunConfig | None = None) -> dict:
    """Compare each method's per-agent answer distributions with raw prompting."""
    city = city or gen_synthetic_city(100, 8, 0.6, seed)
    profiles = archetype_population(n_agents, city, seed)
    contexts = fixed_contexts(city, profiles)
    reference, _, _, raw_stats = collect_answers("raw", profiles, contexts, reps, seed, cfg)
    raw_modes = {aid: reference_mode(empirical([_selection(a) for a in ans]))
                 for aid, ans in reference.items()}
    out = {"n_agents": n_agents, "reps": reps, "seed": seed,
           "raw": {"requests": raw_stats.requests_total, "tokens": raw_stats.tokens_total}}
    for method in methods:
        if method == "raw":
            continue
        answers, decider, grouping, stats = collect_answers(method, profiles, contexts, reps, seed, cfg)
        row = compare(answers, reference)
        row.update(requests=stats.requests_total, tokens=stats.tokens_total,
                   arity_fallback_agents=decider.fallback_agents)
        if method == "archetype":
            row.update(_mode_split(grouping, raw_modes, row))
        row["per_agent_jsd"] = {str(k): v for k, v in row["per_agent_jsd"].items()}
        row.pop("per_agent_modal_hit")
        out[method] = row
    return out


def _mode_split(grouping, raw_modes: dict, row: dict) -> dict:
    """JSD and T1 restricted to agents whose modal choice differs from their representative's."""
    differs = []
    for g in grouping.groups:
        rep = min(g.member_ids)
        differs += [a for a in g.member_ids if a != rep and raw_modes[a] != raw_modes[rep]]
    values = [row["per_agent_jsd"][a] for a in differs]
    if not values:
        return {"n_mode_differs": 0, "jsd_mode_differs": None, "jsd_mode_differs_std": None,
                "t1_mode_differs": None}
    mean, std = mean_std(values)
    hits = sum(row["per_agent_modal_hit"][a] for a in differs)
    return {"n_mode_differs": len(values), "jsd_mode_differs": mean, "jsd_mode_differs_std": std,
            "t1_mode_differs": 100.0 * hits / len(values)}


def save_faithfulness(result: dict, method: str, cfg: RunConfig):
    """Persist one method's comparison as a run directory."""
    row = result[method]
    metrics = MetricsReport(jsd_mean=row["jsd_mean"], jsd_std=row["jsd_std"], t1=row["t1"])
    return save_summary_run(cfg, metrics, {"faithfulness.json": result})
