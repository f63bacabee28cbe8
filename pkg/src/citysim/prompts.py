"""Prompt schemas exchanged with LLM backends.

Every prompt starts with a ``[schema:<name>]`` line so backends (the mock in
particular) can tell them apart; the rest is plain text with ``### SECTION``
headers. See docs/prompts.md for the full catalogue.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .profile import StaticProfile, render_profile

SCHEMA_PREFIX = "[schema:"

RAW = "raw"
BATCH = "batch"
DISTILL = "distill"
IPL_BOOTSTRAP = "ipl-bootstrap"
IPL_ASSIGN = "ipl-assign"
IPL_DESCRIBE = "ipl-describe"
DISTILL_STEP = "distill-step"
PLAN = "plan"
REFLECT = "reflect"
INTERROGATE = "interrogate"

NO_CONTEXT = "(no context)"

CHOICE_FUNCTION = (
    "You are role-playing the city resident described in the input section. Considering who "
    "you are, what you intend to do now and what you remember, choose the single place to go "
    "next from the candidate list. Reply with the candidate id followed by an importance "
    "rating from 1 to 10 for the visit, formatted as '<poi_id> (importance <n>)'."
)

POI_CATEGORIES = ("work", "education", "food", "shopping", "leisure", "health", "service",
                  "residence")


def schema_of(prompt: str) -> str | None:
    first = prompt.lstrip().split("\n", 1)[0].strip()
    if first.startswith(SCHEMA_PREFIX) and first.endswith("]"):
        return first[len(SCHEMA_PREFIX):-1]
    return None


def tag(schema: str, body: str) -> str:
    return f"{SCHEMA_PREFIX}{schema}]\n{body}"


@dataclass
class RawPrompt:
    """A single-agent prompt split into its three addressable sections.

    ``function_section`` is the task instruction, ``input_section`` the
    static-profile rendering and ``variable_section`` the named dynamic slots.
    """

    agent_id: int
    function_section: str
    input_section: str
    variable_section: dict = field(default_factory=dict)

    def body(self) -> str:
        return "\n".join([
            "### FUNCTION",
            self.function_section,
            "### INPUT",
            f"agent: {self.agent_id}",
            self.input_section,
            "### VARIABLES",
            render_variables(self.variable_section),
        ])

    def render(self) -> str:
        return tag(RAW, self.body())


def render_variables(variables: dict) -> str:
    if not variables:
        return NO_CONTEXT
    return "\n".join(f"{k}: {v}" for k, v in variables.items())


def render_candidates(candidates) -> str:
    """``candidates`` is an iterable of ``(poi_id, category, distance_km)``."""
    return "; ".join(f"{pid} {cat} {dist:.2f}km" for pid, cat, dist in candidates)


def choice_prompt(profile: StaticProfile, variables: dict) -> RawPrompt:
    return RawPrompt(profile.agent_id, CHOICE_FUNCTION, render_profile(profile), dict(variables))


def batch_prompt(raws: list[RawPrompt]) -> str:
    parts = [
        f"Answer each of the following {len(raws)} independent requests. Reply with exactly one "
        "line per request, in the order given, formatted as '<agent_id>: <answer>'."
    ]
    for raw in raws:
        parts.append(f"=== REQUEST agent {raw.agent_id} ===")
        parts.append(raw.body())
    return tag(BATCH, "\n".join(parts))


def ipl_bootstrap_prompt(profiles: list[StaticProfile]) -> str:
    parts = [
        "Group the following residents into clusters of people with similar static attributes "
        "(age, gender, occupation, education, income). Every resident must belong to exactly one "
        "group. For each group write a description of the characteristics its members share. "
        'Reply with JSON only: {"groups": [{"description": "...", "members": [<agent ids>]}]}.'
    ]
    for p in profiles:
        parts.append(f"### RESIDENT {p.agent_id}")
        parts.append(render_profile(p))
    return tag(IPL_BOOTSTRAP, "\n".join(parts))


def ipl_assign_prompt(profile: StaticProfile, groups) -> str:
    parts = [
        "Below are descriptions of resident groups followed by one resident. For every group, "
        "estimate the likelihood (a number between 0 and 1) that the resident belongs to it. "
        'Reply with JSON only, mapping group id to likelihood, e.g. {"g1": 0.8, "g2": 0.1}.'
    ]
    for g in groups:
        parts.append(f"### GROUP {g.group_id}")
        parts.append(g.description)
    parts.append(f"### RESIDENT {profile.agent_id}")
    parts.append(render_profile(profile))
    return tag(IPL_ASSIGN, "\n".join(parts))


def ipl_describe_prompt(profile: StaticProfile) -> str:
    return tag(IPL_DESCRIBE, "\n".join([
        "The resident below does not fit any existing group and becomes the prototype of a new "
        "one. Describe the characteristics that members of this new group share, in a few "
        "sentences.",
        f"### RESIDENT {profile.agent_id}",
        render_profile(profile),
    ]))


def distill_step_prompt(step: str, raw: RawPrompt, notes: dict) -> str:
    instructions = {
        "summarize": "Summarize the task that the FUNCTION section asks for in one sentence.",
        "extract": "List which fields of the prompt are static agent attributes and which are "
                   "dynamic per-request variables.",
        "share": "Decide which parts can be shared by a group of similar agents and which must "
                 "stay per agent.",
        "rewrite": "Rewrite the raw prompt into a batched meta-prompt. Keep the task instruction, "
                   "replace the individual attributes with the placeholder {group_context} and "
                   "put the placeholder {agent_slots} where the per-agent variables go. The reply "
                   "must ask for one answer line per agent, in order, as '<agent_id>: <answer>'.",
    }
    parts = [f"step: {step}", instructions[step], "### RAW PROMPT", raw.render()]
    if notes:
        parts.append("### NOTES")
        parts.extend(f"{k}: {v}" for k, v in notes.items())
    return tag(DISTILL_STEP, "\n".join(parts))


def plan_prompt(profile: StaticProfile, date: str, memory_excerpt: str) -> str:
    return tag(PLAN, "\n".join([
        "### FUNCTION",
        f"Create a plan for {date} for the resident below. Reply with one line per activity, "
        "formatted as 'HH:MM-HH:MM | activity | category', where category is one of: "
        + ", ".join(c for c in POI_CATEGORIES if c != "residence") + ".",
        "### INPUT",
        f"agent: {profile.agent_id}",
        render_profile(profile),
        "### VARIABLES",
        f"date: {date}",
        f"memory: {memory_excerpt or NO_CONTEXT}",
    ]))


def reflect_prompt(profile: StaticProfile, memory_lines: list[str]) -> str:
    return tag(REFLECT, "\n".join([
        "### FUNCTION",
        "Given the recent memories of the resident below, write one to three high-level "
        "reflections, one per line, each starting with 'reflection:'.",
        "### INPUT",
        f"agent: {profile.agent_id}",
        render_profile(profile),
        "### MEMORIES",
        *memory_lines,
    ]))


def interrogate_prompt(profile: StaticProfile, memory_lines: list[str], question: str) -> str:
    return tag(INTERROGATE, "\n".join([
        "### FUNCTION",
        "You are the resident described below. Answer the question using only the retrieved "
        "memories. If none are relevant, say that you have no relevant memory.",
        "### INPUT",
        f"agent: {profile.agent_id}",
        render_profile(profile),
        "### MEMORIES",
        *memory_lines,
        "### QUESTION",
        question,
    ]))


def parse_json_reply(text: str):
    """Parse a JSON object from a model reply, tolerating surrounding prose."""
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise ValueError("no JSON object in reply")
    return json.loads(text[start:end + 1])
