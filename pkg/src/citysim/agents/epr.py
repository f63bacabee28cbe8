"""Exploration and preferential return.

An agent that has visited ``S`` distinct places explores a new one with
probability ``rho * S**-gamma`` and otherwise returns to a known place with
probability proportional to its past visit count. Waiting times (hours)
follow ``P(dt) ~ dt**(-1-beta) * exp(-dt/tau)`` truncated to [0.25, 24].
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_trapezoid

from ..errors import NoUnvisitedPOI

WAIT_MIN_H = 0.25
WAIT_MAX_H = 24.0
_GRID_POINTS = 200_001


@dataclass(frozen=True)
class EprParams:
    rho: float = 0.6
    gamma: float = 0.21
    tau: float = 17.0
    beta: float = 0.8

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError("rho must be in (0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.tau <= 0 or self.beta <= 0:
            raise ValueError("tau and beta must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def explore_probability(S: int, p: EprParams) -> float:
    if S < 1:
        raise ValueError("S counts distinct visited places and must be >= 1")
    return min(1.0, p.rho * S ** -p.gamma)


def wait_density(dt, p: EprParams):
    dt = np.asarray(dt, dtype=float)
    return dt ** (-1.0 - p.beta) * np.exp(-dt / p.tau)


@lru_cache(maxsize=16)
def _wait_table(tau: float, beta: float):
    # log spacing puts resolution where the power law is steep
    grid = np.geomspace(WAIT_MIN_H, WAIT_MAX_H, _GRID_POINTS)
    cdf = cumulative_trapezoid(wait_density(grid, EprParams(tau=tau, beta=beta)), grid, initial=0.0)
    return grid, cdf / cdf[-1]


def sample_waits(rng: np.random.Generator, p: EprParams, size=None):
    """Inverse-CDF draws (hours) from the tabulated truncated density."""
    grid, cdf = _wait_table(p.tau, p.beta)
    return np.interp(rng.random(size), cdf, grid)


def epr_wait(rng: np.random.Generator, p: EprParams) -> float:
    return float(sample_waits(rng, p))


def choose_return(visits: Counter, rng: np.random.Generator) -> str:
    ids = sorted(visits)
    weights = np.fromiter((visits[i] for i in ids), dtype=float, count=len(ids))
    cum = np.cumsum(weights)
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return ids[min(k, len(ids) - 1)]


class ExplorePool:
    """Places an agent may explore, as an ordered tuple plus a set for membership."""

    def __init__(self, ids):
        self.ids = tuple(sorted(ids))
        self.members = frozenset(self.ids)

    def __len__(self):
        return len(self.ids)


def choose_explore(visits: Counter, pool: ExplorePool, rng: np.random.Generator,
                   weights: np.ndarray | None = None) -> str:
    """Pick from ``pool`` minus places already visited.

    Uniform by default; ``weights`` (aligned with ``pool.ids``) biases the pick,
    e.g. toward places near home.
    """
    fresh = len(pool) - sum(1 for v in visits if v in pool.members)
    if fresh <= 0:
        raise NoUnvisitedPOI("every candidate place has been visited")
    if weights is not None:
        w = weights.copy()
        for i, q in enumerate(pool.ids):
            if q in visits:
                w[i] = 0.0
        cum = np.cumsum(w)
        if cum[-1] <= 0:
            raise NoUnvisitedPOI("no unvisited place has positive weight")
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        return pool.ids[min(k, len(pool) - 1)]
    if fresh * 4 >= len(pool):
        while True:  # rejection sampling stays cheap while most of the pool is fresh
            pick = pool.ids[int(rng.integers(len(pool)))]
            if pick not in visits:
                return pick
    unvisited = [q for q in pool.ids if q not in visits]
    return unvisited[int(rng.integers(len(unvisited)))]


def distance_decay_weights(xy: np.ndarray, origin, scale_km: float) -> np.ndarray:
    """``exp(-d / scale_km)`` per row of ``xy``, ``d`` measured from ``origin``."""
    d = np.hypot(xy[:, 0] - origin[0], xy[:, 1] - origin[1])
    return np.exp(-d / scale_km)


def epr_move(visits: Counter, pool: ExplorePool, rng: np.random.Generator, p: EprParams,
             weights: np.ndarray | None = None) -> tuple[str, bool]:
    """One EPR decision: ``(place, explored)``. Does not update ``visits``."""
    if not visits:
        raise ValueError("EPR needs at least one visited place (the home)")
    if rng.random() < explore_probability(len(visits), p):
        try:
            return choose_explore(visits, pool, rng, weights), True
        except NoUnvisitedPOI:
            pass
    return choose_return(visits, rng), False


def epr_step(state, pool: ExplorePool, rng: np.random.Generator, p: EprParams) -> str:
    """Advance ``state`` (an :class:`AgentState`) by one EPR move and record the visit."""
    place, explored = epr_move(state.visits, pool, rng, p)
    state.visits[place] += 1
    state.location = place
    state.last_explored = explored
    return place
