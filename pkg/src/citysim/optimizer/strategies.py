"""Ways of turning a round of per-agent choice requests into LLM traffic.

* ``raw``: one request per agent.
* ``batch``: up to ``cap`` full raw prompts concatenated per request.
* ``group_distill``: per IPL group, one distill request per ``cap`` agents,
  sharing the instruction and group description.
* ``archetype``: per group, only the first agent asks; every other member
  reuses that answer verbatim.

Each round's requests are submitted together and joined, so they overlap
on the gateway.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .. import prompts as P
from ..errors import ArityMismatch
from ..llm import complete_many
from ..profile import StaticProfile
from .distill import MAX_BATCH, DistillMetaPrompt, chunk, render_batch, split_response
from .ipl import Grouping, group_number

log = logging.getLogger(__name__)

METHODS = ("raw", "batch", "archetype", "group_distill")


@dataclass
class ChoiceRequest:
    profile: StaticProfile
    variables: dict

    @property
    def agent_id(self):
        return self.profile.agent_id

    def raw(self) -> P.RawPrompt:
        return P.choice_prompt(self.profile, self.variables)


@dataclass
class Decider:
    method: str
    llm: object
    grouping: Grouping | None = None
    meta: DistillMetaPrompt | None = None
    cap: int = MAX_BATCH
    fallback_agents: int = 0
    fallback_batches: int = 0
    reused_answers: int = 0
    events: list = field(default_factory=list)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if self.method in ("archetype", "group_distill") and self.grouping is None:
            raise ValueError(f"{self.method} needs a grouping")
        if self.method == "group_distill" and self.meta is None:
            raise ValueError("group_distill needs a distill meta-prompt")

    def decide(self, requests: list[ChoiceRequest]) -> dict:
        """Answer text (or the failure) per agent id."""
        if not requests:
            return {}
        handler = getattr(self, f"_{self.method}")
        return handler(requests)

    # -- methods ---------------------------------------------------------------

    def _raw(self, requests):
        texts = complete_many(self.llm, [(r.raw().render(), (r.agent_id,)) for r in requests])
        return {r.agent_id: t for r, t in zip(requests, texts)}

    def _batch(self, requests):
        batches = chunk(list(requests), self.cap)
        prompts = [(P.batch_prompt([r.raw() for r in b]), tuple(r.agent_id for r in b))
                   for b in batches]
        return self._split_all(batches, complete_many(self.llm, prompts))

    def _group_distill(self, requests):
        batches, prompts = [], []
        loose = []
        for group_id, members in self._by_group(requests):
            if group_id is None:
                loose.extend(members)
                continue
            group = self.grouping.group(group_id)
            for b in chunk(members, self.cap):
                bound = render_batch(group, [(r.agent_id, r.variables) for r in b], self.meta)
                batches.append(b)
                prompts.append((bound.render(), bound.agent_ids))
        out = self._split_all(batches, complete_many(self.llm, prompts))
        if loose:
            out.update(self._raw(loose))
        return out

    def _archetype(self, requests):
        reps, followers = [], {}
        for group_id, members in self._by_group(requests):
            if group_id is None:
                reps.extend(members)
                continue
            reps.append(members[0])
            followers[members[0].agent_id] = members[1:]
        answers = self._raw(reps)
        out = {}
        for rep in reps:
            out[rep.agent_id] = answers[rep.agent_id]
            for r in followers.get(rep.agent_id, ()):
                out[r.agent_id] = answers[rep.agent_id]
                self.reused_answers += 1
        return out

    # -- helpers -----------------------------------------------------------------

    def _by_group(self, requests):
        groups: dict = {}
        for r in requests:
            groups.setdefault(self.grouping.membership.get(r.agent_id), []).append(r)
        return sorted(groups.items(), key=lambda kv: -1 if kv[0] is None else group_number(kv[0]))

    def _split_all(self, batches, texts):
        out, retry = {}, []
        for b, text in zip(batches, texts):
            ids = [r.agent_id for r in b]
            if isinstance(text, Exception):
                out.update({a: text for a in ids})
                continue
            try:
                out.update(split_response(text, ids))
            except ArityMismatch as exc:
                log.warning("batch for agents %s: %s; retrying as raw prompts", ids, exc)
                self.fallback_batches += 1
                self.fallback_agents += len(b)
                self.events.append({"event": "arity_fallback", "agents": ids,
                                    "expected": exc.expected, "got": exc.got})
                retry.extend(b)
        if retry:
            out.update(self._raw(retry))
        return out
