from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class LatencyModel:
    """Phase durations (seconds) the mock backend charges per request.

    The defaults are benchmark conventions, not measured provider latencies.
    """

    t_init: float = 0.005
    t_connect: float = 0.020
    t_teardown: float = 0.0
    t_wait_base: float = 0.200
    t_per_token: float = 0.0001

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")

    def wait_for(self, input_tokens: int, output_tokens: int) -> float:
        return self.t_wait_base + self.t_per_token * (input_tokens + output_tokens)

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyModel":
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)
