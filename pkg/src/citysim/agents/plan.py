"""Daily plans: parsing LLM plan text and the occupation fallback."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .. import prompts as P
from ..errors import UnparseablePlan
from ..llm import completer
from ..profile import WORKING, StaticProfile

log = logging.getLogger(__name__)

DAY = 24 * 60
_LINE = re.compile(r"^\s*(\d{1,2}):(\d{2})\s*-\s*(\d{1,2}):(\d{2})\s*\|\s*([^|]+?)\s*\|\s*(\w+)\s*$")
VENUE_CATEGORIES = tuple(c for c in P.POI_CATEGORIES if c != "residence")


@dataclass(frozen=True)
class Intention:
    start: int  # minute of day
    end: int
    activity: str
    category: str

    def covers(self, minute: int) -> bool:
        return self.start <= minute < self.end

    def render(self) -> str:
        return f"{hhmm(self.start)}-{hhmm(self.end)} | {self.activity} | {self.category}"


@dataclass
class DailyPlan:
    date: str
    day: int
    intentions: list = field(default_factory=list)
    fallback: bool = False

    def __post_init__(self):
        self.intentions = sorted(self.intentions, key=lambda i: i.start)
        for i in self.intentions:
            if not 0 <= i.start < i.end <= DAY:
                raise UnparseablePlan(f"window {i.render()} is not within the day")
        for a, b in zip(self.intentions, self.intentions[1:]):
            if b.start < a.end:
                raise UnparseablePlan(f"windows overlap: {a.render()} / {b.render()}")

    def intention_at(self, minute: int) -> Intention | None:
        for i in self.intentions:
            if i.covers(minute):
                return i
        return None

    def next_start(self, minute: int) -> int | None:
        return next((i.start for i in self.intentions if i.start > minute), None)

    def render(self) -> str:
        return "\n".join(i.render() for i in self.intentions)


def hhmm(minute: int) -> str:
    return f"{minute // 60:02d}:{minute % 60:02d}"


def parse_plan(text: str, date: str, day: int) -> DailyPlan:
    intentions = []
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _LINE.match(line)
        if not m:
            continue
        h0, m0, h1, m1, activity, category = m.groups()
        category = category.lower()
        if category not in VENUE_CATEGORIES:
            raise UnparseablePlan(f"unknown category {category!r}")
        intentions.append(Intention(int(h0) * 60 + int(m0), int(h1) * 60 + int(m1), activity, category))
    if not intentions:
        raise UnparseablePlan("no plan lines found")
    return DailyPlan(date, day, intentions)


def fallback_plan(profile: StaticProfile, date: str, day: int) -> DailyPlan:
    """Home -> main activity -> home, keyed on occupation."""
    if profile.occupation in WORKING:
        core = [Intention(9 * 60, 17 * 60, "work", "work")]
    elif profile.occupation == "student":
        core = [Intention(9 * 60, 16 * 60, "classes", "education")]
    else:
        core = [Intention(10 * 60, 11 * 60, "errands", "shopping"),
                Intention(12 * 60, 13 * 60, "lunch", "food")]
    return DailyPlan(date, day, core, fallback=True)


def plan_day(profile: StaticProfile, llm, date: str, day: int, memory_excerpt: str = "") -> DailyPlan:
    """Ask for a plan; one retry on unparseable text, then the fallback template."""
    ask = completer(llm)
    prompt = P.plan_prompt(profile, date, memory_excerpt)
    for attempt in range(2):
        try:
            return parse_plan(ask(prompt, (profile.agent_id,)), date, day)
        except UnparseablePlan as exc:
            log.info("agent %s: unparseable plan (attempt %d): %s", profile.agent_id, attempt + 1, exc)
    log.warning("agent %s: using fallback plan for %s", profile.agent_id, date)
    return fallback_plan(profile, date, day)
