"""Append-only memory stream with importance accounting and keyword recall."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

KINDS = ("observation", "plan", "reflection")

_WORD = re.compile(r"[a-z0-9_]+")
_STOP = frozenset("""a an the and or of to in on at for from by with about is are was were be been
do did does i you me my your we our it its this that what which who whom how when there here
have has had not no any some""".split())
_NORMAL = {"went": "go", "gone": "go", "going": "go", "goes": "go", "visited": "visit",
           "visits": "visit", "visiting": "visit", "places": "place", "planned": "plan",
           "plans": "plan", "thought": "think", "thinking": "think"}
# words a question may use for an entry kind without them appearing in its text
_KIND_TAGS = {
    "observation": frozenset({"go", "where", "place", "visit", "been"}),
    "plan": frozenset({"plan", "intend", "schedule", "going"}),
    "reflection": frozenset({"think", "reflect", "feel", "why", "reflection"}),
}


def keywords(text: str) -> set[str]:
    words = (_NORMAL.get(w, w) for w in _WORD.findall(text.lower()))
    return {w for w in words if w not in _STOP}


@dataclass(frozen=True)
class MemoryEntry:
    entry_id: int
    time: int  # minutes since simulation start
    kind: str
    text: str
    importance: int
    location: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MemoryStream:
    reflect_threshold: float = 20
    entries: list = field(default_factory=list)
    importance_accum: float = 0

    def append(self, time: int, kind: str, text: str, importance: int = 1,
               location: str | None = None) -> MemoryEntry:
        if kind not in KINDS:
            raise ValueError(f"unknown memory kind {kind!r}")
        if self.entries and time < self.entries[-1].time:
            raise ValueError("memory entries must be appended in time order")
        importance = min(10, max(1, int(importance)))
        entry = MemoryEntry(len(self.entries), time, kind, text, importance, location)
        self.entries.append(entry)
        if kind != "reflection":
            self.importance_accum += importance
        return entry

    def reset_accum(self) -> None:
        self.importance_accum = 0

    def recent(self, n: int, kind: str | None = None) -> list[MemoryEntry]:
        picked = [e for e in reversed(self.entries) if kind is None or e.kind == kind]
        return picked[:n][::-1]

    def since(self, entry_id: int) -> list[MemoryEntry]:
        return self.entries[entry_id:]

    def retrieve(self, question: str, k: int = 8, day_minutes: int = 1440) -> list[MemoryEntry]:
        """Top-``k`` entries by keyword overlap with ``question``; newest first on ties.

        "today" in the question matches entries from the latest simulated day.
        """
        q = keywords(question)
        if not q or not self.entries:
            return []
        today = self.entries[-1].time // day_minutes
        scored = []
        for e in self.entries:
            words = keywords(e.text) | _KIND_TAGS[e.kind]
            if e.time // day_minutes == today:
                words = words | {"today"}
            score = len(q & words)
            if score:
                scored.append((-score, -e.time, -e.entry_id, e))
        scored.sort(key=lambda s: s[:3])
        return [s[3] for s in scored[:k]]
