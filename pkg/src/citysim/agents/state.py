from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from ..profile import StaticProfile
from .memory import MemoryStream
from .plan import DailyPlan


@dataclass
class Trajectory:
    agent_id: int
    points: list = field(default_factory=list)  # (minute, poi_id)

    def append(self, minute: int, poi_id: str) -> None:
        if self.points and minute <= self.points[-1][0]:
            raise ValueError(f"trajectory of agent {self.agent_id}: time {minute} is not after "
                             f"{self.points[-1][0]}")
        self.points.append((minute, poi_id))

    def __len__(self):
        return len(self.points)

    @property
    def locations(self) -> list[str]:
        return [p for _, p in self.points]


@dataclass
class AgentState:
    """Static profile plus everything that evolves during a run."""

    static: StaticProfile
    home: str
    location: str
    memory: MemoryStream = field(default_factory=MemoryStream)
    plan: DailyPlan | None = None
    next_wake: int = 0
    visits: Counter = field(default_factory=Counter)
    # intention window (day, start) whose venue has already been chosen
    served: tuple | None = None
    attempts: int = 0
    last_explored: bool = False

    @property
    def agent_id(self) -> int:
        return self.static.agent_id


def iso_time(start: datetime, minute: int) -> str:
    return (start + timedelta(minutes=minute)).isoformat()


def write_trajectories(path, trajectories, city, start: datetime) -> None:
    """One JSON object per point: agent, ISO time, POI and block."""
    with open(path, "w") as fh:
        for traj in sorted(trajectories, key=lambda t: t.agent_id):
            for minute, poi in traj.points:
                fh.write(json.dumps({"agent": traj.agent_id, "t": iso_time(start, minute), "poi": poi,
                                     "block": city.poi(poi).block_id}) + "\n")


def read_trajectories(path, start: datetime) -> list[Trajectory]:
    trajs: dict[int, Trajectory] = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            minute = round((datetime.fromisoformat(rec["t"]) - start).total_seconds() / 60)
            trajs.setdefault(rec["agent"], Trajectory(rec["agent"])).append(minute, rec["poi"])
    return [trajs[a] for a in sorted(trajs)]
