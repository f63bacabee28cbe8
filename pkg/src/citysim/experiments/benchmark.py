"""Throughput and cost benchmarks: optimized pipeline against its unoptimized baseline."""
from __future__ import annotations

import json
import logging
from dataclasses import replace

from ..agents.engine import GenerativeEngine
from ..backends.latency import LatencyModel
from ..backends.mock import MockBackend
from ..backends.tokens import count_tokens
from ..gateway.core import Gateway, GatewayConfig, LlmClient
from ..gateway.desim import predict_makespan
from ..optimizer.rates import reduction_rates
from ..optimizer.strategies import Decider
from .. import prompts as P
from .config import RunConfig, baseline_of, check_comparable
from .runner import (build_city, build_gateway, build_population, engine_config, prepare_decider,
                     save_run, simulate)

log = logging.getLogger(__name__)

SCALABILITY_NS = (1, 10, 100, 1000, 10000)


# -- gateway-only workloads ------------------------------------------------------------


def gateway_workload(n: int, lm: LatencyModel, config: GatewayConfig, seed: int = 0):
    """``n`` independent single-agent requests through a virtual-clock gateway."""
    gw = Gateway(MockBackend(lm, seed), config, clock="virtual")
    client = LlmClient(gw)
    results = client.complete_many([(f"ping from agent {i}", (i,)) for i in range(n)])
    gw.shutdown()
    failed = sum(isinstance(r, Exception) for r in results)
    if failed:
        log.warning("%d of %d workload requests failed", failed, n)
    return gw.gateway_stats()


def _waits(n: int, lm: LatencyModel) -> list[float]:
    out_tokens = count_tokens("OK.")
    return [lm.wait_for(count_tokens(f"ping from agent {i}"), out_tokens) for i in range(n)]


def overlap_benchmark(n: int = 1000, lm: LatencyModel | None = None, capacity: int = 8) -> dict:
    """Async pooled dispatch against sequential dispatch, with the desim prediction."""
    lm = lm or LatencyModel(t_per_token=0.0)
    fast = gateway_workload(n, lm, GatewayConfig(pool_capacity=capacity))
    slow = gateway_workload(n, lm, GatewayConfig(pool_capacity=capacity, scheduler="sequential",
                                                 reuse_connections=False))
    no_reuse = gateway_workload(n, lm, GatewayConfig(pool_capacity=capacity, reuse_connections=False))
    waits = _waits(n, lm)
    predicted = predict_makespan(waits, lm, capacity)
    return {
        "n": n,
        "capacity": capacity,
        "wall_time": fast.wall_time,
        "baseline_wall_time": slow.wall_time,
        "speedup": slow.wall_time / fast.wall_time,
        "predicted_makespan": predicted,
        "predicted_baseline": predict_makespan(waits, lm, capacity, reuse=False, scheduler="sequential"),
        "relative_error": abs(fast.wall_time - predicted) / predicted,
        "reuse_on": fast.to_dict(),
        "reuse_off": no_reuse.to_dict(),
    }


def scalability_curve(ns=SCALABILITY_NS, lm: LatencyModel | None = None, capacity: int = 8) -> list[dict]:
    """Per-agent virtual time as the number of concurrent agents grows."""
    lm = lm or LatencyModel(t_per_token=0.0)
    rows = []
    for n in ns:
        stats = gateway_workload(n, lm, GatewayConfig(pool_capacity=capacity))
        predicted = predict_makespan(_waits(n, lm), lm, capacity)
        rows.append({"n": n, "wall_time": stats.wall_time, "per_agent": stats.wall_time / n,
                     "predicted_per_agent": predicted / n})
    return rows


# -- decision-round workload ----------------------------------------------------------


class RecordingDecider:
    """Wraps a decider and keeps every round of choice requests it was asked."""

    def __init__(self, inner: Decider):
        self.inner = inner
        self.rounds: list[list] = []

    @property
    def llm(self):
        return self.inner.llm

    @property
    def events(self):
        return self.inner.events

    def decide(self, requests):
        self.rounds.append(list(requests))
        return self.inner.decide(requests)


def record_decision_rounds(cfg: RunConfig):
    """Run the simulation with raw prompts answered directly by the mock and keep
    the location-choice rounds it produced."""
    city = build_city(cfg)
    profiles = build_population(cfg, city)
    mock = MockBackend(cfg.latency_model, cfg.seed)
    rec = RecordingDecider(Decider("raw", mock))
    GenerativeEngine(city, profiles, mock, rec, engine_config(cfg)).run(cfg.days)
    return profiles, rec.rounds


def prompt_weights(rounds) -> dict:
    """Mean token weight of the static and dynamic parts of the raw choice prompts."""
    static = dynamic = n = 0
    for requests in rounds:
        for r in requests:
            raw = r.raw()
            static += count_tokens(raw.function_section) + count_tokens(raw.input_section)
            dynamic += count_tokens(P.render_variables(raw.variable_section))
            n += 1
    if not n:
        return {"static": 0.0, "dynamic": 0.0, "ratio": float("nan")}
    return {"static": static / n, "dynamic": dynamic / n, "ratio": static / max(dynamic, 1)}


def replay_rounds(cfg: RunConfig, profiles, rounds):
    """Push recorded rounds through ``cfg``'s decider and gateway.

    Returns ``(decision_stats, setup_stats, answers)``.
    """
    gw = build_gateway(cfg, MockBackend(cfg.latency_model, cfg.seed))
    try:
        decider, _ = prepare_decider(cfg, profiles, gw)
        setup = gw.gateway_stats()
        answers = [decider.decide(r) for r in rounds]
        gw.shutdown()
        return gw.gateway_stats() - setup, setup, answers
    finally:
        gw.shutdown(wait=False)


def decision_benchmark(cfg: RunConfig, baseline: RunConfig | None = None, recorded=None) -> dict:
    """Savings of ``cfg``'s optimizer on the simulation's location-choice traffic."""
    baseline = baseline or baseline_of(cfg)
    check_comparable(cfg, baseline)
    profiles, rounds = recorded or record_decision_rounds(cfg)
    base, _, base_answers = replay_rounds(baseline, profiles, rounds)
    opt, setup, opt_answers = replay_rounds(cfg, profiles, rounds)
    rr, tr = reduction_rates(base, opt)
    decisions = sum(len(r) for r in rounds)
    same = sum(a.get(k) == b.get(k) for a, b in zip(base_answers, opt_answers) for k in a)
    return {
        "n_agents": len(profiles),
        "decisions": decisions,
        "rounds": len(rounds),
        "rr": rr,
        "tr": tr,
        "speedup": base.wall_time / opt.wall_time if opt.wall_time else float("inf"),
        "time_per_agent": opt.wall_time / len(profiles),
        "baseline_time_per_agent": base.wall_time / len(profiles),
        "answer_agreement": same / decisions if decisions else 1.0,
        "prompt_weights": prompt_weights(rounds),
        "baseline": base.to_dict(),
        "optimized": opt.to_dict(),
        "setup": setup.to_dict(),
    }


# -- whole-simulation benchmark ---------------------------------------------------------


def run_benchmark(cfg: RunConfig, baseline: RunConfig | None = None, persist: bool = True) -> dict:
    """Simulate with ``cfg`` and its baseline; persist the optimized run with
    speedup and reduction rates filled into its metrics."""
    baseline = baseline or baseline_of(cfg)
    check_comparable(cfg, baseline)
    base = simulate(baseline, persist=False)
    opt = simulate(cfg, persist=False)
    rr, tr = reduction_rates(base.stats, opt.stats)
    speedup = base.stats.wall_time / opt.stats.wall_time if opt.stats.wall_time else float("inf")
    opt.metrics = replace(opt.metrics, rr=rr, tr=tr, speedup=speedup)
    n = cfg.n_agents
    summary = {
        "n_agents": n,
        "optimizer": cfg.optimizer,
        "time_per_agent": opt.stats.wall_time / n,
        "baseline_time_per_agent": base.stats.wall_time / n,
        "speedup": speedup,
        "rr": rr,
        "tr": tr,
        "baseline": base.stats.to_dict(),
        "optimized": opt.stats.to_dict(),
        "baseline_setup": base.setup_stats.to_dict(),
        "optimized_setup": opt.setup_stats.to_dict(),
    }
    if persist:
        path = save_run(opt)
        (path / "benchmark.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        summary["run_dir"] = str(path)
    return summary
