"""Question a simulated agent about its day, grounded in its stored memories."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..agents.memory import MemoryEntry, MemoryStream
from ..errors import UnknownAgent
from ..gateway.core import LlmClient
from ..llm import completer
from .. import prompts as P
from .config import RunConfig
from .runner import build_backend, build_gateway, load_agents

RETRIEVE_K = 8


@dataclass
class Answer:
    text: str
    citations: list  # memory entry ids the answer was grounded on

    def render(self) -> str:
        cites = ", ".join(f"#{i}" for i in self.citations) or "none"
        return f"{self.text}\n[cited memories: {cites}]"


class Interrogator:
    """Loads a run directory once and answers questions for any of its agents."""

    def __init__(self, run_dir, llm=None):
        self.run_dir = Path(run_dir)
        self.agents = load_agents(self.run_dir)
        self._gateway = None
        if llm is None:
            cfg = RunConfig.load(self.run_dir / "config.json")
            llm = build_backend(cfg)
            if cfg.backend != "mock":
                self._gateway = build_gateway(cfg, llm)
                llm = LlmClient(self._gateway, prefix="q")
        self.ask_llm = completer(llm)

    def close(self) -> None:
        if self._gateway is not None:
            self._gateway.shutdown()

    def memory_of(self, agent_id: int) -> MemoryStream:
        if agent_id not in self.agents:
            raise UnknownAgent(agent_id)
        return MemoryStream(entries=[MemoryEntry(**e) for e in self.agents[agent_id]["memory"]])

    def ask(self, agent_id: int, question: str, k: int = RETRIEVE_K) -> Answer:
        memory = self.memory_of(agent_id)
        hits = memory.retrieve(question, k)
        lines = [f"[{e.entry_id}] {e.text}" for e in hits]
        prompt = P.interrogate_prompt(self.agents[agent_id]["profile"], lines, question)
        return Answer(self.ask_llm(prompt, (agent_id,)), [e.entry_id for e in hits])


def interrogate(run_dir, agent_id: int, question: str, llm=None) -> Answer:
    it = Interrogator(run_dir, llm)
    try:
        return it.ask(agent_id, question)
    finally:
        it.close()
