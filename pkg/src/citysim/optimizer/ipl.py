"""In-context prototype learning: incremental LLM-driven grouping of agents.

The first ``M`` profiles are grouped in one shot. Every later profile is
scored against the existing group descriptions; it joins the best group if
the top likelihood reaches ``T`` and otherwise founds a new group, whose
description is written once and never revised. Groups are never merged.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .. import prompts as P
from ..errors import LikelihoodOutOfRange, UnparseableGrouping
from ..llm import completer
from ..profile import StaticProfile

log = logging.getLogger(__name__)


@dataclass
class Group:
    group_id: str
    description: str
    member_ids: list = field(default_factory=list)
    prototype_summary: str = ""

    def __post_init__(self):
        if not self.description.strip():
            raise ValueError(f"group {self.group_id} has an empty description")
        if not self.prototype_summary:
            self.prototype_summary = self.description.strip().split("\n", 1)[0]

    def to_dict(self) -> dict:
        return {"group_id": self.group_id, "description": self.description,
                "member_ids": list(self.member_ids)}


@dataclass
class IplConfig:
    M: int = 20
    T: float = 0.7
    # raise instead of clamping when likelihoods stay out of [0, 1]
    strict: bool = False

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not 0.0 < self.T < 1.0:
            raise ValueError("T must be in (0, 1)")


def group_number(group_id: str) -> int:
    return int(group_id.lstrip("g"))


@dataclass
class Grouping:
    groups: list = field(default_factory=list)
    membership: dict = field(default_factory=dict)
    likelihood_log: list = field(default_factory=list)

    def group(self, group_id: str) -> Group:
        return self._by_id()[group_id]

    def _by_id(self) -> dict:
        return {g.group_id: g for g in self.groups}

    def group_of(self, agent_id) -> Group:
        return self.group(self.membership[agent_id])

    def new_group(self, description: str, members=()) -> Group:
        g = Group(f"g{len(self.groups) + 1}", description, [])
        self.groups.append(g)
        for a in members:
            self.add(g, a)
        return g

    def add(self, g: Group, agent_id) -> None:
        if agent_id in self.membership:
            raise ValueError(f"agent {agent_id} already assigned to {self.membership[agent_id]}")
        g.member_ids.append(agent_id)
        self.membership[agent_id] = g.group_id

    def to_json(self) -> list:
        return [g.to_dict() for g in self.groups]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def _parse_grouping(text: str, expected: list) -> list[tuple[str, list]]:
    try:
        doc = P.parse_json_reply(text)
        raw_groups = doc["groups"]
        out = [(str(g["description"]), [int(m) for m in g["members"]]) for g in raw_groups]
    except (ValueError, KeyError, TypeError) as exc:
        raise UnparseableGrouping(f"grouping reply is not valid: {exc}") from None
    seen = [m for _, members in out for m in members]
    if sorted(seen) != sorted(expected):
        raise UnparseableGrouping("grouping does not assign every resident exactly once")
    if any(not desc.strip() for desc, _ in out) or any(not members for _, members in out):
        raise UnparseableGrouping("grouping has an empty description or an empty group")
    return out


def ipl_bootstrap(profiles: list[StaticProfile], llm, grouping: Grouping | None = None) -> Grouping:
    """Group the bootstrap profiles in a single request (one retry on a bad reply)."""
    if not profiles:
        raise ValueError("bootstrap needs at least one profile")
    ask = completer(llm)
    grouping = grouping if grouping is not None else Grouping()
    prompt = P.ipl_bootstrap_prompt(profiles)
    expected = [p.agent_id for p in profiles]
    ids = tuple(expected)
    try:
        parsed = _parse_grouping(ask(prompt, ids), expected)
    except UnparseableGrouping as exc:
        log.warning("bootstrap grouping unparseable, retrying once: %s", exc)
        parsed = _parse_grouping(ask(prompt, ids), expected)
    for description, members in parsed:
        grouping.new_group(description, members)
    return grouping


def _parse_likelihoods(text: str, group_ids: list[str]) -> dict[str, float]:
    try:
        doc = P.parse_json_reply(text)
        scores = {gid: float(doc[gid]) for gid in group_ids}
    except (ValueError, KeyError, TypeError) as exc:
        raise UnparseableGrouping(f"likelihood reply is not valid: {exc}") from None
    return scores


def _out_of_range(scores: dict) -> list:
    return [gid for gid, v in scores.items() if not 0.0 <= v <= 1.0]


def ipl_assign(p: StaticProfile, grouping: Grouping, cfg: IplConfig, llm) -> str:
    """Assign ``p`` to a group, creating one if nothing is likely enough."""
    ask = completer(llm)
    entry = {"agent_id": p.agent_id, "likelihoods": {}, "retried": False, "clamped": False}
    if not grouping.groups:
        g = grouping.new_group(ask(P.ipl_describe_prompt(p), (p.agent_id,)), [p.agent_id])
        entry.update(group_id=g.group_id, new_group=True)
        grouping.likelihood_log.append(entry)
        return g.group_id

    group_ids = [g.group_id for g in grouping.groups]
    prompt = P.ipl_assign_prompt(p, grouping.groups)
    try:
        scores = _parse_likelihoods(ask(prompt, (p.agent_id,)), group_ids)
        bad = _out_of_range(scores)
    except UnparseableGrouping as exc:
        log.warning("agent %s: likelihood reply unparseable, retrying: %s", p.agent_id, exc)
        scores, bad = None, True
    if bad:
        entry["retried"] = True
        scores = _parse_likelihoods(ask(prompt, (p.agent_id,)), group_ids)
        bad = _out_of_range(scores)
        if bad:
            if cfg.strict:
                raise LikelihoodOutOfRange(f"agent {p.agent_id}: likelihoods out of range for {bad}")
            log.warning("agent %s: clamping out-of-range likelihoods for %s", p.agent_id, bad)
            scores = {gid: min(1.0, max(0.0, v)) for gid, v in scores.items()}
            entry["clamped"] = True
    entry["likelihoods"] = scores
    best = max(scores.values())
    if best >= cfg.T:
        gid = min((gid for gid, v in scores.items() if v == best), key=group_number)
        grouping.add(grouping.group(gid), p.agent_id)
        entry.update(group_id=gid, new_group=False)
    else:
        g = grouping.new_group(ask(P.ipl_describe_prompt(p), (p.agent_id,)), [p.agent_id])
        entry.update(group_id=g.group_id, new_group=True)
    grouping.likelihood_log.append(entry)
    return entry["group_id"]


def run_ipl(profiles: list[StaticProfile], cfg: IplConfig, llm) -> Grouping:
    """Bootstrap on the first ``M`` profiles, then assign the rest in order."""
    grouping = ipl_bootstrap(profiles[:cfg.M], llm)
    for p in profiles[cfg.M:]:
        ipl_assign(p, grouping, cfg, llm)
    return grouping
