"""Distill meta-prompts: one shared instruction + group context, many agent slots.

A meta-prompt is derived once per raw prompt kind through a four-step chain
(summarize, extract, share, rewrite). The rewrite must keep two
placeholders, ``{group_context}`` and ``{agent_slots}``, which are filled per
batch. Per-agent slots carry only the dynamic variables.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace

from .. import prompts as P
from ..backends.tokens import count_tokens
from ..errors import AgentNotInGroup, ArityMismatch, DistillInvalid
from ..gateway.types import LlmRequest, LlmResponse
from ..llm import completer
from .ipl import Group

log = logging.getLogger(__name__)

CONTEXT_SLOT = "{group_context}"
AGENTS_SLOT = "{agent_slots}"
STEPS = ("summarize", "extract", "share", "rewrite")
MAX_BATCH = 16

_ANSWER = re.compile(r"^\s*([^:\s]+)\s*:\s*(.*?)\s*$")


@dataclass(frozen=True)
class DistillMetaPrompt:
    shared_function: str
    template: str
    shared_context: str = ""
    per_agent_slots: tuple = ()
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        missing = [s for s in (CONTEXT_SLOT, AGENTS_SLOT) if s not in self.template]
        if missing:
            raise DistillInvalid(f"meta-prompt template lacks {', '.join(missing)}")

    def for_group(self, group: Group) -> "DistillMetaPrompt":
        return replace(self, shared_context=group.description, per_agent_slots=())

    def with_slots(self, slots) -> "DistillMetaPrompt":
        return replace(self, per_agent_slots=tuple((a, dict(v)) for a, v in slots))

    @property
    def agent_ids(self) -> tuple:
        return tuple(a for a, _ in self.per_agent_slots)

    def render(self) -> str:
        slots = "\n".join(render_slot(a, v) for a, v in self.per_agent_slots)
        body = self.template.replace(CONTEXT_SLOT, self.shared_context or P.NO_CONTEXT)
        return P.tag(P.DISTILL, body.replace(AGENTS_SLOT, slots))


def render_slot(agent_id, variables: dict) -> str:
    return f"--- agent {agent_id} ---\n{P.render_variables(variables)}"


def distill_meta_prompt(raw: P.RawPrompt, llm) -> DistillMetaPrompt:
    """Run the four-step generation chain and validate the rewritten template."""
    if not (raw.function_section and raw.input_section):
        raise DistillInvalid("raw prompt needs function and input sections")
    ask = completer(llm)
    notes: dict = {}
    for step in STEPS:
        notes[step] = ask(P.distill_step_prompt(step, raw, notes), (raw.agent_id,)).strip()
    template = notes.pop("rewrite")
    return DistillMetaPrompt(shared_function=raw.function_section, template=template, notes=notes)


def chunk(ids: list, size: int = MAX_BATCH) -> list[list]:
    if size < 1:
        raise ValueError("chunk size must be >= 1")
    return [ids[i:i + size] for i in range(0, len(ids), size)]


def render_batch(group: Group, dynamics, meta: DistillMetaPrompt) -> DistillMetaPrompt:
    """Bind ``group`` and the ordered ``(agent_id, variables)`` pairs to ``meta``."""
    members = set(group.member_ids)
    dynamics = list(dynamics)
    for agent_id, _ in dynamics:
        if agent_id not in members:
            raise AgentNotInGroup(f"agent {agent_id} is not a member of {group.group_id}")
    if not dynamics:
        raise ValueError("a batch needs at least one agent")
    return meta.for_group(group).with_slots(dynamics)


def assemble_batch(group: Group, dynamics, meta: DistillMetaPrompt, request_id: str = "distill",
                   created_at: float = 0.0) -> LlmRequest:
    bound = render_batch(group, dynamics, meta)
    prompt = bound.render()
    return LlmRequest(request_id, bound.agent_ids, prompt, max(1, count_tokens(prompt)), created_at)


def split_response(resp, group_order) -> dict:
    """Map each agent in ``group_order`` to its answer line, by position."""
    text = resp.text if isinstance(resp, LlmResponse) else str(resp)
    answers = []
    for line in text.splitlines():
        m = _ANSWER.match(line)
        if m:
            answers.append((m.group(1), m.group(2)))
    order = list(group_order)
    if len(answers) != len(order):
        raise ArityMismatch(len(order), len(answers))
    out = {}
    for agent_id, (label, answer) in zip(order, answers):
        if label != str(agent_id):
            log.debug("answer labelled %s decoded positionally as agent %s", label, agent_id)
        out[agent_id] = answer
    return out
