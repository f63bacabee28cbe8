"""Persona-conditioned location-choice oracle.

Each (persona, candidate, seed) triple is hashed to a preference score; the
scores are softmax-normalized at temperature 1. The result depends only on
candidate identity, never on list order.
"""
from __future__ import annotations

import hashlib
import math
from typing import Iterable, Mapping

from ..errors import EmptyCandidates
from ..profile import PERSONA_FIELDS, StaticProfile

# spread of hashed scores before the softmax; larger means more decisive personas
PREFERENCE_SCALE = 16.0


def unit_hash(*parts) -> float:
    """Deterministic uniform draw in [0, 1) keyed by ``parts``."""
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


def persona_key(profile) -> tuple:
    if isinstance(profile, StaticProfile):
        return profile.persona
    if isinstance(profile, Mapping):
        return tuple(profile[f] for f in PERSONA_FIELDS)
    return tuple(profile)


def oracle_distribution(profile, candidates: Iterable[str], seed: int) -> dict[str, float]:
    ids = list(dict.fromkeys(candidates))
    if not ids:
        raise EmptyCandidates("oracle needs at least one candidate")
    key = "|".join(str(x) for x in persona_key(profile))
    scores = {c: PREFERENCE_SCALE * unit_hash(seed, key, c) for c in ids}
    top = max(scores.values())
    weights = {c: math.exp(s - top) for c, s in scores.items()}
    z = math.fsum(weights.values())
    return {c: weights[c] / z for c in ids}


def draw(dist: Mapping[str, float], u: float) -> str:
    """Inverse-CDF pick over candidates in sorted-id order."""
    acc = 0.0
    ids = sorted(dist)
    for c in ids:
        acc += dist[c]
        if u < acc:
            return c
    return ids[-1]


def mode(dist: Mapping[str, float]) -> str:
    """Most likely candidate; ties go to the lowest id."""
    return min(dist, key=lambda c: (-dist[c], c))
