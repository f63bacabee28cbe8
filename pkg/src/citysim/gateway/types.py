from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable


@dataclass(frozen=True)
class LlmRequest:
    request_id: str
    agent_ids: tuple
    prompt: str
    est_input_tokens: int
    created_at: float = 0.0

    def __post_init__(self):
        if not self.agent_ids:
            raise ValueError("LlmRequest needs at least one agent id")
        if self.est_input_tokens < 1:
            raise ValueError("est_input_tokens must be >= 1")
        object.__setattr__(self, "agent_ids", tuple(self.agent_ids))


@dataclass(frozen=True)
class PhaseTimings:
    """Durations in seconds of the three phases of one LLM call.

    ``t_connect`` covers establishment plus teardown and is zero when the
    request rode on a pooled connection.
    """

    t_init: float = 0.0
    t_connect: float = 0.0
    t_transfer_wait: float = 0.0

    def __post_init__(self):
        if min(self.t_init, self.t_connect, self.t_transfer_wait) < 0:
            raise ValueError("phase durations must be non-negative")

    @property
    def total(self) -> float:
        return self.t_init + self.t_connect + self.t_transfer_wait


@dataclass(frozen=True)
class LlmResponse:
    request_id: str
    text: str
    input_tokens: int
    output_tokens: int
    timings: PhaseTimings = field(default_factory=PhaseTimings)

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


class TaskKind(str, Enum):
    MEMORY_UPDATE = "memory_update"
    SPATIAL_QUERY = "spatial_query"
    OTHER = "other"


@dataclass
class LocalTask:
    """CPU work an agent needs done off the dispatch path.

    ``cost`` is the task's CPU time in seconds as charged on a virtual clock;
    on the real clock the function's actual run time is what counts.
    """

    task_id: str
    agent_id: Any
    kind: TaskKind
    fn: Callable[[Any], Any]
    payload: Any = None
    cost: float = 0.0


@dataclass(frozen=True)
class GatewayStats:
    requests_total: int = 0
    errors_total: int = 0
    tokens_in_total: int = 0
    tokens_out_total: int = 0
    connections_created: int = 0
    connections_reused: int = 0
    local_tasks_total: int = 0
    wall_time_ns: int = 0
    t_init_ns: int = 0
    t_connect_ns: int = 0
    t_transfer_wait_ns: int = 0

    @property
    def wall_time(self) -> float:
        return self.wall_time_ns / 1e9

    @property
    def tokens_total(self) -> int:
        return self.tokens_in_total + self.tokens_out_total

    @property
    def per_phase_sums(self) -> PhaseTimings:
        return PhaseTimings(self.t_init_ns / 1e9, self.t_connect_ns / 1e9,
                            self.t_transfer_wait_ns / 1e9)

    def __sub__(self, other: "GatewayStats") -> "GatewayStats":
        return GatewayStats(**{k: getattr(self, k) - getattr(other, k)
                               for k in self.__dataclass_fields__})

    def __add__(self, other: "GatewayStats") -> "GatewayStats":
        return GatewayStats(**{k: getattr(self, k) + getattr(other, k)
                               for k in self.__dataclass_fields__})

    def to_dict(self) -> dict:
        """Flat JSON-ready view (the stats.json layout)."""
        phases = self.per_phase_sums
        return {
            "requests_total": self.requests_total,
            "errors_total": self.errors_total,
            "tokens_in_total": self.tokens_in_total,
            "tokens_out_total": self.tokens_out_total,
            "connections_created": self.connections_created,
            "connections_reused": self.connections_reused,
            "local_tasks_total": self.local_tasks_total,
            "wall_time": self.wall_time,
            "t_init_sum": phases.t_init,
            "t_connect_sum": phases.t_connect,
            "t_transfer_wait_sum": phases.t_transfer_wait,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GatewayStats":
        return cls(
            requests_total=d["requests_total"],
            errors_total=d.get("errors_total", 0),
            tokens_in_total=d["tokens_in_total"],
            tokens_out_total=d["tokens_out_total"],
            connections_created=d["connections_created"],
            connections_reused=d["connections_reused"],
            local_tasks_total=d.get("local_tasks_total", 0),
            wall_time_ns=round(d["wall_time"] * 1e9),
            t_init_ns=round(d.get("t_init_sum", 0.0) * 1e9),
            t_connect_ns=round(d.get("t_connect_sum", 0.0) * 1e9),
            t_transfer_wait_ns=round(d.get("t_transfer_wait_sum", 0.0) * 1e9),
        )
