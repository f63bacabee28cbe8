"""Deterministic offline stand-in for a chat-completion model.

The mock reads the structured prompt schemas from :mod:`citysim.prompts` and
answers them with fixed templates. Location choices come from the persona
oracle, with the per-decision randomness keyed on the agent id and the
request's time/attempt variables. A correctly assembled batch or distill
prompt therefore yields exactly the answers that the per-agent raw prompts
would.
"""
from __future__ import annotations

import asyncio
import itertools
import json
import re
import threading
from dataclasses import dataclass, field

from .. import prompts as P
from ..errors import BackendError, MalformedPrompt, TransportError
from ..gateway.types import LlmRequest, LlmResponse, PhaseTimings
from ..profile import PERSONA_FIELDS, WORKING, age_band, describe_persona
from .latency import LatencyModel
from .oracle import draw, mode, oracle_distribution, unit_hash
from .tokens import count_tokens

IMPORTANCE = {"health": 6, "leisure": 5, "education": 4, "work": 3, "food": 3,
              "shopping": 3, "service": 2, "residence": 1}

_PLAN_TEMPLATES = {
    "working": [("08:30", "12:00", "work", "work"), ("12:00", "13:00", "lunch", "food"),
                ("13:00", "17:30", "work", "work"), ("18:00", "19:30", "after work", None)],
    "student": [("08:30", "12:00", "classes", "education"), ("12:00", "13:00", "lunch", "food"),
                ("13:30", "16:30", "study", "education"), ("18:30", "21:00", "friends", "leisure")],
    "retiree": [("09:00", "10:30", "morning walk", "leisure"), ("10:30", "12:00", "market", "shopping"),
                ("12:00", "13:30", "lunch", "food"), ("15:00", "16:00", "check-up", "health")],
    "unemployed": [("10:00", "11:30", "job centre", "service"), ("12:00", "13:00", "lunch", "food"),
                   ("15:00", "17:00", "errands", "shopping")],
}
_EVENING = ("shopping", "leisure", "food")

_SECTION = re.compile(r"^### (.+)$", re.M)
_BATCH_SPLIT = re.compile(r"^=== REQUEST agent (\S+) ===$", re.M)
_SLOT_SPLIT = re.compile(r"^--- agent (\S+) ---$", re.M)
_BLOCK_SPLIT = re.compile(r"^### (RESIDENT|GROUP) (\S+)$", re.M)


@dataclass
class MockConfig:
    seed: int = 0
    # "sample" draws from the oracle; "argmax" always returns its mode
    choice_mode: str = "sample"
    fail_requests: frozenset = field(default_factory=frozenset)
    transport_failures: int = 0
    malformed_groupings: int = 0
    malformed_plans: int = 0
    dropped_answers: int = 0
    out_of_range_likelihoods: int = 0


class MockConnection:
    _ids = itertools.count(1)

    def __init__(self):
        self.conn_id = next(self._ids)
        self.closed = False


class MockBackend:
    def __init__(self, latency: LatencyModel | None = None, seed: int = 0, **options):
        self.latency = latency or LatencyModel()
        self.config = MockConfig(seed=seed, **options)
        if self.config.choice_mode not in ("sample", "argmax"):
            raise ValueError(f"unknown choice_mode {self.config.choice_mode!r}")
        self._faults = threading.Lock()
        self._budget = {
            "transport": self.config.transport_failures,
            "grouping": self.config.malformed_groupings,
            "plan": self.config.malformed_plans,
            "drop": self.config.dropped_answers,
            "likelihood": self.config.out_of_range_likelihoods,
        }

    @property
    def seed(self) -> int:
        return self.config.seed

    # -- gateway backend protocol ---------------------------------------------

    async def prepare(self, req: LlmRequest):
        if self.latency.t_init:
            await asyncio.sleep(self.latency.t_init)
        return None

    async def connect(self):
        if self.latency.t_connect:
            await asyncio.sleep(self.latency.t_connect)
        return MockConnection()

    async def exchange(self, conn, req: LlmRequest, payload):
        if self._take("transport"):
            raise TransportError("injected connection reset")
        text, tokens_in, tokens_out = self._answer(req)
        wait = self.latency.wait_for(tokens_in, tokens_out)
        if wait:
            await asyncio.sleep(wait)
        return text, tokens_in, tokens_out

    async def close(self, conn):
        conn.closed = True
        if self.latency.t_teardown:
            await asyncio.sleep(self.latency.t_teardown)

    # -- synchronous surface ---------------------------------------------------

    def respond(self, req: LlmRequest) -> LlmResponse:
        """Answer without a gateway; timings follow the latency model for a fresh connection."""
        text, tokens_in, tokens_out = self._answer(req)
        lm = self.latency
        timings = PhaseTimings(lm.t_init, lm.t_connect + lm.t_teardown, lm.wait_for(tokens_in, tokens_out))
        return LlmResponse(req.request_id, text, tokens_in, tokens_out, timings)

    def respond_text(self, prompt: str) -> str:
        schema = P.schema_of(prompt)
        handler = self._handlers.get(schema)
        if handler is None:
            if schema is not None:
                raise MalformedPrompt(f"unknown schema {schema!r}")
            return "OK."
        try:
            return handler(self, prompt)
        except (KeyError, ValueError, IndexError) as exc:
            raise MalformedPrompt(f"cannot parse {schema} prompt: {exc}") from exc

    def _answer(self, req: LlmRequest):
        if req.request_id in self.config.fail_requests:
            raise BackendError("injected failure", req.request_id)
        text = self.respond_text(req.prompt)
        return text, count_tokens(req.prompt), count_tokens(text)

    def _take(self, fault: str) -> bool:
        with self._faults:
            if self._budget[fault] > 0:
                self._budget[fault] -= 1
                return True
        return False

    # -- choices -----------------------------------------------------------------

    def choose(self, persona: tuple, agent_id: str, variables: dict) -> str:
        candidates = parse_candidates(variables.get("candidates", ""))
        if not candidates:
            return "none (importance 1)"
        dist = oracle_distribution(persona, list(candidates), self.seed)
        if self.config.choice_mode == "argmax":
            pick = mode(dist)
        else:
            u = unit_hash(self.seed, "draw", agent_id, variables.get("time", ""),
                          variables.get("attempt", ""))
            pick = draw(dist, u)
        return f"{pick} (importance {IMPORTANCE.get(candidates[pick], 2)})"

    def _raw(self, prompt: str) -> str:
        return self._raw_body(_strip_tag(prompt))[1]

    def _raw_body(self, body: str):
        secs = _sections(body)
        inp = _kv(secs["INPUT"])
        variables = _kv(secs.get("VARIABLES", ""))
        return inp["agent"], self.choose(_persona_from_kv(inp), inp["agent"], variables)

    def _batch(self, prompt: str) -> str:
        parts = _BATCH_SPLIT.split(prompt)
        if len(parts) < 3:
            raise ValueError("no request blocks")
        lines = []
        for agent, body in zip(parts[1::2], parts[2::2]):
            _, answer = self._raw_body(body)
            lines.append(f"{agent}: {answer}")
        return self._maybe_drop(lines)

    def _distill(self, prompt: str) -> str:
        persona = _traits(prompt)
        parts = _SLOT_SPLIT.split(prompt)
        if len(parts) < 3:
            raise ValueError("no agent slots")
        lines = []
        for agent, slot in zip(parts[1::2], parts[2::2]):
            slot = slot.split("\n### ", 1)[0]
            lines.append(f"{agent}: {self.choose(persona, agent, _kv(slot))}")
        return self._maybe_drop(lines)

    def _maybe_drop(self, lines: list[str]) -> str:
        if len(lines) > 1 and self._take("drop"):
            lines = lines[:-1]
        return "\n".join(lines)

    # -- grouping ----------------------------------------------------------------

    def _ipl_bootstrap(self, prompt: str) -> str:
        if self._take("grouping"):
            return "These residents all look fairly similar to me."
        groups: dict[tuple, list] = {}
        for kind, ident, block in _blocks(prompt):
            if kind == "RESIDENT":
                groups.setdefault(_persona_from_kv(_kv(block)), []).append(int(ident))
        if not groups:
            raise ValueError("no residents")
        return json.dumps({"groups": [{"description": group_description(persona), "members": members}
                                      for persona, members in groups.items()]})

    def _ipl_assign(self, prompt: str) -> str:
        resident = None
        scores = {}
        for kind, ident, block in _blocks(prompt):
            if kind == "GROUP":
                try:
                    scores[ident] = _traits(block)
                except ValueError:
                    scores[ident] = None
            else:
                resident = _persona_from_kv(_kv(block))
        if resident is None:
            raise ValueError("no resident")
        out = {}
        for gid, traits in scores.items():
            out[gid] = 0.0 if traits is None else round(
                sum(a == b for a, b in zip(traits, resident)) / len(PERSONA_FIELDS), 4)
        if out and self._take("likelihood"):
            out[next(iter(out))] = 1.7
        return json.dumps(out)

    def _ipl_describe(self, prompt: str) -> str:
        for kind, _, block in _blocks(prompt):
            if kind == "RESIDENT":
                return group_description(_persona_from_kv(_kv(block)))
        raise ValueError("no resident")

    # -- distillation chain --------------------------------------------------------

    def _distill_step(self, prompt: str) -> str:
        body = _strip_tag(prompt)
        step = body.split("\n", 1)[0].removeprefix("step:").strip()
        raw = body.split("### RAW PROMPT\n", 1)[1].split("\n### NOTES", 1)[0]
        secs = _sections(_strip_tag(raw))
        function = secs["FUNCTION"].strip()
        static_keys = [k for k in _kv(secs["INPUT"]) if k != "agent"]
        dynamic_keys = list(_kv(secs.get("VARIABLES", "")))
        if step == "summarize":
            return "Task: " + function.split(". ")[0].rstrip(".") + "."
        if step == "extract":
            return f"static: {', '.join(static_keys)}; dynamic: {', '.join(dynamic_keys)}"
        if step == "share":
            return ("shared: task instruction, group profile; per-agent: "
                    + ", ".join(dynamic_keys))
        if step == "rewrite":
            return "\n".join([
                "### FUNCTION",
                function,
                "### GROUP",
                "Every agent listed below shares this profile:",
                "{group_context}",
                "### AGENTS",
                "{agent_slots}",
                "### ANSWER FORMAT",
                "Reply with one line per agent, in the order listed, formatted as "
                "'<agent_id>: <answer>'.",
            ])
        raise ValueError(f"unknown step {step!r}")

    # -- agent workflow ------------------------------------------------------------

    def _plan(self, prompt: str) -> str:
        if self._take("plan"):
            return "Plans are hard to pin down today."
        secs = _sections(_strip_tag(prompt))
        inp = _kv(secs["INPUT"])
        date = _kv(secs.get("VARIABLES", "")).get("date", "")
        occupation = inp["occupation"]
        if occupation in WORKING:
            template = _PLAN_TEMPLATES["working"]
        else:
            template = _PLAN_TEMPLATES.get(occupation, _PLAN_TEMPLATES["unemployed"])
        u = unit_hash(self.seed, "plan", inp["agent"], date)
        shift = 15 * int(u * 3)
        evening = _EVENING[int(unit_hash(self.seed, "evening", inp["agent"], date) * len(_EVENING))]
        lines = []
        for start, end, activity, category in template:
            lines.append(f"{_shift(start, shift)}-{_shift(end, shift)} | {activity} | "
                         f"{category or evening}")
        return "\n".join(lines)

    def _reflect(self, prompt: str) -> str:
        memories = _strip_tag(prompt).split("### MEMORIES", 1)[1]
        counts: dict[str, int] = {}
        for cat in re.findall(r"\((\w+)\)", memories):
            if cat in IMPORTANCE:
                counts[cat] = counts.get(cat, 0) + 1
        ranked = sorted(counts, key=lambda c: (-counts[c], c))
        if not ranked:
            return "reflection: my days have been quiet lately."
        out = [f"reflection: I spend much of my time at {ranked[0]} places."]
        if len(ranked) > 1:
            out.append(f"reflection: my days mix {ranked[0]} and {ranked[1]} visits.")
        return "\n".join(out)

    def _interrogate(self, prompt: str) -> str:
        body = _strip_tag(prompt)
        memories = body.split("### MEMORIES\n", 1)[1].split("### QUESTION", 1)[0]
        lines = [ln for ln in memories.splitlines() if ln.strip()]
        if not lines:
            return "I have no relevant memory about that."
        return "Here is what I remember:\n" + "\n".join(lines)

    _handlers = {
        P.RAW: _raw,
        P.BATCH: _batch,
        P.DISTILL: _distill,
        P.IPL_BOOTSTRAP: _ipl_bootstrap,
        P.IPL_ASSIGN: _ipl_assign,
        P.IPL_DESCRIBE: _ipl_describe,
        P.DISTILL_STEP: _distill_step,
        P.PLAN: _plan,
        P.REFLECT: _reflect,
        P.INTERROGATE: _interrogate,
    }


def mock_respond(req: LlmRequest, lm: LatencyModel, seed: int, **options) -> LlmResponse:
    return MockBackend(lm, seed, **options).respond(req)


def group_description(persona: tuple) -> str:
    traits = "; ".join(f"{k}={v}" for k, v in zip(PERSONA_FIELDS, persona))
    return f"{describe_persona(persona)}\ntraits: {traits}"


def parse_candidates(text: str) -> dict[str, str]:
    """``"P1 food 0.20km; P2 work 0.41km"`` -> ``{"P1": "food", "P2": "work"}``."""
    out = {}
    for item in text.split(";"):
        tokens = item.split()
        if len(tokens) >= 2:
            out[tokens[0]] = tokens[1]
    return out


def _strip_tag(prompt: str) -> str:
    prompt = prompt.lstrip()
    return prompt.split("\n", 1)[1] if prompt.startswith(P.SCHEMA_PREFIX) else prompt


def _sections(body: str) -> dict[str, str]:
    out: dict[str, str] = {}
    parts = _SECTION.split(body)
    for name, content in zip(parts[1::2], parts[2::2]):
        out.setdefault(name.strip(), content.strip("\n"))
    return out


def _blocks(prompt: str):
    parts = _BLOCK_SPLIT.split(prompt)
    for kind, ident, block in zip(parts[1::3], parts[2::3], parts[3::3]):
        yield kind, ident, block.split("\n### ", 1)[0]


def _kv(block: str) -> dict[str, str]:
    out = {}
    for line in block.splitlines():
        key, sep, value = line.partition(":")
        if sep and key.strip() and " " not in key.strip():
            out.setdefault(key.strip(), value.strip())
    return out


def _persona_from_kv(kv: dict) -> tuple:
    band = kv.get("age_band") or age_band(int(kv["age"]))
    return (band, kv["gender"], kv["occupation"], kv["education"], int(kv["income_quintile"]))


def _traits(text: str) -> tuple:
    m = re.search(r"^traits: (.+)$", text, re.M)
    if not m:
        raise ValueError("no traits line")
    kv = dict(item.strip().split("=", 1) for item in m.group(1).split(";"))
    return _persona_from_kv(kv)


def _shift(hhmm: str, minutes: int) -> str:
    h, m = map(int, hhmm.split(":"))
    total = min(h * 60 + m + minutes, 24 * 60 - 1)
    return f"{total // 60:02d}:{total % 60:02d}"

