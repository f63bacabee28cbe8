"""Bulk-synchronous tick engines for generative and EPR agents.

Within a tick, due agents are handled in id order: their perception queries
are offloaded to the gateway's worker pool, their location choices are
issued together through a :class:`~citysim.optimizer.strategies.Decider`
and joined at the end of the tick, and the results are applied in id order.
"""
from __future__ import annotations

import heapq
import logging
import math
import re
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta

import numpy as np

from .. import prompts as P
from ..environment import City
from ..gateway.types import LocalTask, TaskKind
from ..llm import complete_many
from ..optimizer.strategies import ChoiceRequest, Decider
from ..profile import StaticProfile
from .epr import EprParams, ExplorePool, distance_decay_weights, epr_move, sample_waits
from .memory import MemoryStream
from .plan import DAY, UnparseablePlan, fallback_plan, hhmm, parse_plan
from .state import AgentState, Trajectory

log = logging.getLogger(__name__)

_CHOICE = re.compile(r"^\s*(\S+?)\s*(?:\(importance\s*(\d+)\))?\s*$")
_REFLECTION = re.compile(r"^\s*reflection:\s*(.+?)\s*$", re.I | re.M)


@dataclass
class EngineConfig:
    tick_minutes: int = 15
    perception_radius_km: float = 1.0
    candidate_cap: int = 10
    reflect_threshold: float = 20
    memory_excerpt: int = 3
    # virtual seconds charged per perception query on the worker pool
    spatial_query_cost: float = 0.0005
    start_date: str = "2025-01-06"

    @property
    def start(self) -> datetime:
        return datetime.fromisoformat(self.start_date)

    def to_dict(self) -> dict:
        return asdict(self)


def parse_choice(text: str) -> tuple[str, int]:
    first = text.strip().splitlines()[0] if text.strip() else ""
    m = _CHOICE.match(first)
    if not m:
        raise ValueError(f"unparseable choice {text!r}")
    return m.group(1), int(m.group(2) or 1)


def perceive(payload):
    """Spatial query run on the worker pool: nearest venues of one category."""
    city, loc, radius, category, cap = payload
    return [(p.poi_id, p.category, d) for d, p in
            city.nearby_pois(loc, radius, category, with_distance=True)[:cap]]


def home_poi(city: City, profile: StaticProfile) -> str:
    homes = city.residences(profile.home_block)
    if homes:
        return homes[0]
    # blocks without a residence: the block's first POI stands in for home
    return min(p.poi_id for p in city.pois if p.block_id == profile.home_block)


class _Engine:
    def __init__(self, city: City, profiles: list[StaticProfile], cfg: EngineConfig):
        self.city = city
        self.cfg = cfg
        self.events: list[dict] = []
        self.states: dict[int, AgentState] = {}
        self.trajectories: dict[int, Trajectory] = {}
        for p in sorted(profiles, key=lambda p: p.agent_id):
            home = home_poi(city, p)
            state = AgentState(p, home, home, MemoryStream(cfg.reflect_threshold))
            state.visits[home] += 1
            self.states[p.agent_id] = state
            traj = Trajectory(p.agent_id)
            traj.append(0, home)
            self.trajectories[p.agent_id] = traj
        self.now = 0

    def _event(self, agent_id, event: str, **extra):
        self.events.append({"t": self.now, "agent": agent_id, "event": event, **extra})

    def _quantize_up(self, minute: float) -> int:
        tick = self.cfg.tick_minutes
        return int(math.ceil(minute / tick)) * tick

    def _move(self, a: AgentState, poi_id: str, what: str, importance: int, remember: bool = True):
        t = self.now
        a.location = poi_id
        a.visits[poi_id] += 1
        if remember:
            poi = self.city.poi(poi_id)
            day, minute = divmod(t, DAY)
            a.memory.append(t, "observation",
                            f"day {day + 1} {hhmm(minute)}: went to {poi_id} ({poi.category}) for "
                            f"{what} in block {poi.block_id}", importance, poi_id)
        self.trajectories[a.agent_id].append(t, poi_id)

    def profiles(self) -> list[StaticProfile]:
        return [s.static for s in self.states.values()]


class GenerativeEngine(_Engine):
    """Plan / perceive / decide / record / reflect agents driven by an LLM."""

    def __init__(self, city: City, profiles, llm, decider: Decider, cfg: EngineConfig | None = None,
                 gateway=None):
        super().__init__(city, profiles, cfg or EngineConfig())
        self.llm = llm
        self.decider = decider
        self.gateway = gateway
        self.plan_fallbacks = 0
        self.failed_steps = 0
        self.reflections = 0
        for s in self.states.values():
            s.next_wake = self.cfg.tick_minutes

    def run(self, days: float) -> None:
        tick = self.cfg.tick_minutes
        end = int(round(days * DAY / tick)) * tick
        for t in range(self.now, end, tick):
            self.tick(t)
        self.now = end

    def tick(self, t: int) -> None:
        self.now = t
        day, minute = divmod(t, DAY)
        if minute == 0:
            self._plan_round(day)
        choosers = []
        for a in self.states.values():
            if a.next_wake > t:
                continue
            intention = a.plan.intention_at(minute) if a.plan and a.plan.day == day else None
            if intention is None:
                if a.location != a.home:
                    self._move(a, a.home, "going home", 1)
                nxt = a.plan.next_start(minute) if a.plan and a.plan.day == day else None
                a.next_wake = self._quantize_up(day * DAY + nxt) if nxt is not None else (day + 1) * DAY
            elif a.served == (day, intention.start):
                a.next_wake = max(t + self.cfg.tick_minutes, self._quantize_up(day * DAY + intention.end))
            else:
                choosers.append((a, intention))
        if choosers:
            self._choice_round(choosers)
        self._reflect_round()

    # -- planning ----------------------------------------------------------------

    def _plan_round(self, day: int) -> None:
        date = (self.cfg.start + timedelta(days=day)).date().isoformat()
        pending = list(self.states.values())
        for attempt in range(2):
            prompts = [(P.plan_prompt(a.static, date, self._excerpt(a)), (a.agent_id,)) for a in pending]
            retry = []
            for a, text in zip(pending, complete_many(self.llm, prompts)):
                try:
                    if isinstance(text, Exception):
                        raise UnparseablePlan(str(text))
                    a.plan = parse_plan(text, date, day)
                except UnparseablePlan:
                    retry.append(a)
            pending = retry
            if not pending:
                break
        for a in pending:
            a.plan = fallback_plan(a.static, date, day)
            self.plan_fallbacks += 1
            self._event(a.agent_id, "plan_fallback", date=date)
        for a in self.states.values():
            a.memory.append(self.now, "plan", f"plan for {date}: " + "; ".join(
                i.render() for i in a.plan.intentions), 1)

    # -- perception and choice -------------------------------------------------------

    def _excerpt(self, a: AgentState) -> str:
        recent = a.memory.recent(self.cfg.memory_excerpt)
        return " | ".join(e.text for e in recent)

    def _perceive_all(self, choosers) -> dict:
        cfg = self.cfg
        jobs = {a.agent_id: (self.city, self.city.poi(a.location).loc, cfg.perception_radius_km,
                             intention.category, cfg.candidate_cap) for a, intention in choosers}
        if self.gateway is None:
            return {aid: perceive(job) for aid, job in jobs.items()}
        handles = [self.gateway.offload_local_task(LocalTask(
            f"q{self.now}-{aid}", aid, TaskKind.SPATIAL_QUERY, perceive, job, cfg.spatial_query_cost))
            for aid, job in jobs.items()]
        for h in handles:
            h.result()
        out = {}
        for aid in jobs:
            for _, result in self.gateway.mailbox(aid):
                out[aid] = result
        return out

    def _choice_round(self, choosers) -> None:
        t = self.now
        day, minute = divmod(t, DAY)
        seen = self._perceive_all(choosers)
        requests, meta = [], {}
        for a, intention in choosers:
            cands = seen[a.agent_id]
            if not cands:
                a.memory.append(t, "observation", f"day {day + 1} {hhmm(minute)}: no reachable venue "
                                f"for {intention.activity} near {a.location}", 1, a.location)
                self.trajectories[a.agent_id].append(t, a.location)
                a.served = (day, intention.start)
                a.next_wake = max(t + self.cfg.tick_minutes, self._quantize_up(day * DAY + intention.end))
                continue
            variables = {
                "time": f"day {day + 1} {hhmm(minute)}",
                "attempt": a.attempts,
                "location": f"{a.location} ({self.city.poi(a.location).category}) in block "
                            f"{self.city.poi(a.location).block_id}",
                "intention": f"{intention.activity} ({intention.category})",
                "memory": self._excerpt(a) or P.NO_CONTEXT,
                "candidates": P.render_candidates(cands),
            }
            requests.append(ChoiceRequest(a.static, variables))
            meta[a.agent_id] = (a, intention)
        answers = self.decider.decide(requests)
        for aid in sorted(meta):
            a, intention = meta[aid]
            answer = answers.get(aid)
            try:
                if isinstance(answer, Exception) or answer is None:
                    raise ValueError(str(answer))
                poi_id, importance = parse_choice(answer)
                if poi_id not in self.city.poi_by_id:
                    raise ValueError(f"unknown POI {poi_id!r}")
            except ValueError as exc:
                a.attempts += 1
                self.failed_steps += 1
                a.next_wake = t + self.cfg.tick_minutes
                self._event(aid, "step_failed", reason=str(exc)[:200])
                continue
            self._move(a, poi_id, intention.activity, importance)
            a.attempts = 0
            a.served = (day, intention.start)
            a.next_wake = max(t + self.cfg.tick_minutes, self._quantize_up(day * DAY + intention.end))

    # -- reflection --------------------------------------------------------------------

    def _reflect_round(self) -> None:
        due = [a for a in self.states.values() if a.memory.importance_accum >= a.memory.reflect_threshold
               and a.memory.entries]
        if not due:
            return
        prompts = [(reflect_prompt_for(a), (a.agent_id,)) for a in due]
        for a, text in zip(due, complete_many(self.llm, prompts)):
            if isinstance(text, Exception):
                self._event(a.agent_id, "reflect_failed", reason=str(text)[:200])
                continue
            self.reflections += len(apply_reflections(a, text, self.now))


def reflect_prompt_for(a: AgentState) -> str:
    lines = [f"[{e.entry_id}] {e.text}" for e in a.memory.recent(20)]
    return P.reflect_prompt(a.static, lines)


def apply_reflections(a: AgentState, text: str, now: int) -> list:
    """Append up to three reflections from ``text``; reset the accumulator if any."""
    found = _REFLECTION.findall(text)[:3]
    added = [a.memory.append(now, "reflection", r, 5, a.location) for r in found]
    if added:
        a.memory.reset_accum()
    return added


def maybe_reflect(a: AgentState, llm, now: int) -> list:
    """Reflect if the importance accumulator reached the threshold; else no-op.

    A backend failure skips the reflection and keeps the accumulator.
    """
    if a.memory.importance_accum < a.memory.reflect_threshold:
        return []
    text = complete_many(llm, [(reflect_prompt_for(a), (a.agent_id,))])[0]
    if isinstance(text, Exception):
        log.warning("agent %s: reflection skipped: %s", a.agent_id, text)
        return []
    return apply_reflections(a, text, now)


class EprEngine(_Engine):
    """Rule-based exploration / preferential return agents (no LLM)."""

    def __init__(self, city: City, profiles, params: EprParams | None = None, seed: int = 0,
                 cfg: EngineConfig | None = None, record_memory: bool = True,
                 decay_km: float | None = None):
        super().__init__(city, profiles, cfg or EngineConfig())
        self.params = params or EprParams()
        self.rng = np.random.default_rng(seed)
        self.pool = ExplorePool(p.poi_id for p in city.pois if p.category != "residence")
        self.record_memory = record_memory
        # optional distance decay of exploration around each agent's home
        self.decay_km = decay_km
        self._weights: dict[str, np.ndarray] = {}
        self._pool_xy = None
        self.explorations = 0
        self._queue = []
        for aid, a in self.states.items():
            a.next_wake = self._wake_after(0)
            heapq.heappush(self._queue, (a.next_wake, aid))

    def _wake_after(self, t: int) -> int:
        wait_min = float(sample_waits(self.rng, self.params)) * 60.0
        return max(t + self.cfg.tick_minutes, self._quantize_up(t + wait_min))

    def _weights_for(self, a: AgentState):
        if self.decay_km is None:
            return None
        if a.home not in self._weights:
            if self._pool_xy is None:
                self._pool_xy = np.array([self.city.poi(q).loc for q in self.pool.ids], dtype=float)
            self._weights[a.home] = distance_decay_weights(self._pool_xy, self.city.poi(a.home).loc,
                                                           self.decay_km)
        return self._weights[a.home]

    def run(self, days: float) -> None:
        end = int(round(days * DAY / self.cfg.tick_minutes)) * self.cfg.tick_minutes
        while self._queue and self._queue[0][0] < end:
            t, aid = heapq.heappop(self._queue)
            self.now = t
            a = self.states[aid]
            place, explored = epr_move(a.visits, self.pool, self.rng, self.params, self._weights_for(a))
            a.last_explored = explored
            self.explorations += explored
            self._move(a, place, "exploring" if explored else "a familiar place", 1,
                       remember=self.record_memory)
            a.next_wake = self._wake_after(t)
            heapq.heappush(self._queue, (a.next_wake, aid))
        self.now = end
