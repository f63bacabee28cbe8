from __future__ import annotations

from ..errors import ZeroBaseline
from ..gateway.types import GatewayStats


def reduction_rates(baseline: GatewayStats, optimized: GatewayStats) -> tuple[float, float]:
    """Request and token reduction of ``optimized`` relative to ``baseline``.

    Tokens are input plus output.
    """
    if baseline.requests_total == 0 or baseline.tokens_total == 0:
        raise ZeroBaseline("baseline run issued no requests")
    rr = 1.0 - optimized.requests_total / baseline.requests_total
    tr = 1.0 - optimized.tokens_total / baseline.tokens_total
    return rr, tr
