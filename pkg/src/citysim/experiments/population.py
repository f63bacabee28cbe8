"""Synthetic populations built from a small set of persona archetypes."""
from __future__ import annotations

import itertools

import numpy as np

from ..environment import City
from ..ingest import assign_homes_by_mix, assign_homes_even
from ..profile import AGE_BANDS, EDUCATIONS, GENDERS, OCCUPATIONS, StaticProfile

# personas closer than this would be scored as the same group by the mock
MIN_PERSONA_DISTANCE = 2


def _distance(a: tuple, b: tuple) -> int:
    return sum(x != y for x, y in zip(a, b))


def archetype_personas(n: int = 20, seed: int = 0) -> list[tuple]:
    """``n`` distinct personas that pairwise differ in at least two attributes."""
    bands = [f"{lo}-{hi}" for lo, hi in AGE_BANDS]
    space = list(itertools.product(bands, GENDERS, OCCUPATIONS, EDUCATIONS, range(1, 6)))
    rng = np.random.default_rng(seed)
    picked: list[tuple] = []
    for i in rng.permutation(len(space)):
        cand = space[i]
        if all(_distance(cand, p) >= MIN_PERSONA_DISTANCE for p in picked):
            picked.append(cand)
            if len(picked) == n:
                return picked
    raise ValueError(f"cannot find {n} well-separated personas")


def profile_from_persona(agent_id: int, persona: tuple, rng: np.random.Generator,
                         home_block: str = "") -> StaticProfile:
    band, gender, occupation, education, income = persona
    lo, hi = (int(x) for x in band.split("-"))
    return StaticProfile(agent_id, int(rng.integers(lo, hi + 1)), gender, occupation, education,
                         int(income), home_block)


def archetype_population(n: int, city: City, seed: int, n_archetypes: int = 20,
                         homes: str = "mix") -> list[StaticProfile]:
    """``n`` agents, each a copy of a random archetype with its own age and home.

    ``homes="mix"`` follows the blocks' resident income mix; ``"even"`` deals
    each income quintile evenly over blocks.
    """
    rng = np.random.default_rng(seed)
    personas = archetype_personas(n_archetypes, seed)
    picks = rng.integers(len(personas), size=n)
    profiles = [profile_from_persona(i, personas[int(k)], rng) for i, k in enumerate(picks)]
    return with_homes(profiles, city, rng, homes)


def quintile_population(n: int, city: City, seed: int, homes: str = "mix") -> list[StaticProfile]:
    """Agents with income quintiles dealt round-robin (equal counts when 5 divides ``n``)."""
    rng = np.random.default_rng(seed)
    profiles = []
    for i in range(n):
        persona = (None, GENDERS[i % len(GENDERS)], OCCUPATIONS[int(rng.integers(len(OCCUPATIONS)))],
                   EDUCATIONS[int(rng.integers(len(EDUCATIONS)))], i % 5 + 1)
        lo, hi = AGE_BANDS[int(rng.integers(len(AGE_BANDS)))]
        profiles.append(StaticProfile(i, int(rng.integers(lo, hi + 1)), *persona[1:], ""))
    return with_homes(profiles, city, rng, homes)


def with_homes(profiles, city: City, rng: np.random.Generator, homes: str) -> list[StaticProfile]:
    quintiles = [p.income_quintile for p in profiles]
    if homes == "mix":
        blocks = assign_homes_by_mix(city, quintiles, rng)
    elif homes == "even":
        blocks = assign_homes_even(city, quintiles)
    else:
        raise ValueError(f"unknown home assignment {homes!r}")
    return [StaticProfile(p.agent_id, p.age, p.gender, p.occupation, p.education, p.income_quintile, b)
            for p, b in zip(profiles, blocks)]
