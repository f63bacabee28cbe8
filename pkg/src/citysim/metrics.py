"""Urban-dynamics and faithfulness metrics.

All functions are pure. Positions are planar km ``(x, y)`` pairs and OD
flows are computed from per-trajectory block-id sequences, so callers
resolve POIs to coordinates/blocks through the city first.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (EmptySelections, EmptyTrajectory, LengthMismatch, NotNormalized,
                     ShapeMismatch, UnknownBlock)

log = logging.getLogger(__name__)

NORM_TOL = 1e-9


def radius_of_gyration(points) -> float:
    """RMS distance (km) of the points from their centre of mass."""
    xy = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(xy) == 0:
        raise EmptyTrajectory("radius of gyration needs at least one point")
    centred = xy - xy.mean(axis=0)
    return math.sqrt(float(np.mean(np.sum(centred**2, axis=1))))


@dataclass
class ODMatrix:
    block_ids: list
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def normalized(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            return np.zeros_like(self.counts, dtype=float)
        return self.counts / total


def od_matrix(block_sequences: Iterable[Sequence[str]], block_ids: Sequence[str]) -> ODMatrix:
    """Count block-to-block transitions, excluding stays within a block.

    ``block_sequences`` holds one block-id sequence per trajectory.
    """
    pos = {b: i for i, b in enumerate(block_ids)}
    counts = np.zeros((len(block_ids), len(block_ids)), dtype=np.int64)
    for seq in block_sequences:
        idx = []
        for b in seq:
            if b not in pos:
                raise UnknownBlock(f"block {b!r} not in city")
            idx.append(pos[b])
        for i, j in zip(idx, idx[1:]):
            if i != j:
                counts[i, j] += 1
    return ODMatrix(list(block_ids), counts)


def od_mse(a: ODMatrix, b: ODMatrix) -> float:
    if a.counts.shape != b.counts.shape or list(a.block_ids) != list(b.block_ids):
        raise ShapeMismatch("OD matrices cover different block sets")
    return float(np.mean((a.normalized - b.normalized) ** 2))


def segregation_from_tau(tau: Sequence[float]) -> float:
    """``5/8 * sum_q |tau_q - 1/5|`` for one block's visitor proportions."""
    return 5.0 / 8.0 * math.fsum(abs(t - 0.2) for t in tau)


def visitor_quintile_counts(visits: Iterable[tuple[str, int]]) -> dict[str, np.ndarray]:
    """``(block_id, visitor income quintile 1..5)`` pairs -> per-block counts."""
    table: dict[str, np.ndarray] = {}
    for block, q in visits:
        row = table.setdefault(block, np.zeros(5, dtype=np.int64))
        row[int(q) - 1] += 1
    return table


def segregation_index(visits: Iterable[tuple[str, int]]) -> dict[str, float]:
    """Per-block income segregation; blocks nobody visited are absent."""
    out = {}
    for block, counts in sorted(visitor_quintile_counts(visits).items()):
        total = counts.sum()
        if total:
            out[block] = min(1.0, max(0.0, segregation_from_tau(counts / total)))
    return out


def _check_dist(p: np.ndarray, name: str):
    if p.ndim != 1 or len(p) == 0:
        raise NotNormalized(f"{name} must be a non-empty 1-d distribution")
    if np.any(p < 0) or abs(math.fsum(p) - 1.0) > NORM_TOL:
        raise NotNormalized(f"{name} sums to {math.fsum(p)!r}")


def jsd(p, q, base: float = 2.0) -> float:
    """Jensen-Shannon divergence; in [0, 1] for base 2.

    ``p`` and ``q`` are either aligned arrays or mappings over a shared
    support (missing keys count as zero mass).
    """
    if isinstance(p, Mapping) or isinstance(q, Mapping):
        support = sorted(set(p) | set(q))
        p = [p.get(k, 0.0) for k in support]
        q = [q.get(k, 0.0) for k in support]
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ShapeMismatch("distributions have different supports")
    _check_dist(p, "p")
    _check_dist(q, "q")
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))

    # clamp rounding noise; the bound is 1 in base 2
    value = (0.5 * kl(p) + 0.5 * kl(q)) / math.log(base)
    return min(max(value, 0.0), math.log(2) / math.log(base))


def empirical(choices: Iterable) -> dict:
    counts = Counter(choices)
    total = sum(counts.values())
    if not total:
        raise EmptySelections("no selections")
    return {k: v / total for k, v in counts.items()}


def reference_mode(reference: Mapping) -> str:
    best = max(reference.values())
    tied = sorted(k for k, v in reference.items() if v == best)
    if len(tied) > 1:
        log.info("reference mode tie between %s; using %s", tied, tied[0])
    return tied[0]


def top1_hit_rate(selections: Sequence, reference: Mapping) -> float:
    """Percentage of ``selections`` equal to the reference distribution's mode."""
    if not selections:
        raise EmptySelections("top-1 hit rate needs at least one repetition")
    target = reference_mode(reference)
    return 100.0 * sum(1 for s in selections if s == target) / len(selections)


def mse(real: Sequence[float], sim: Sequence[float]) -> float:
    real = np.asarray(real, dtype=float)
    sim = np.asarray(sim, dtype=float)
    if real.shape != sim.shape:
        raise LengthMismatch(f"{real.shape} vs {sim.shape}")
    if real.size == 0:
        raise LengthMismatch("no paired values")
    return float(np.mean((real - sim) ** 2))


r_mse = mse
s_mse = mse


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not len(values):
        return 0.0, 0.0
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


@dataclass
class MetricsReport:
    r_mse: float | None = None
    od_mse: float | None = None
    s_mse: float | None = None
    jsd_mean: float | None = None
    jsd_std: float | None = None
    t1: float | None = None
    rr: float | None = None
    tr: float | None = None
    speedup: float | None = None
    per_block_segregation: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: d.get(k) for k in cls.__dataclass_fields__ if k != "per_block_segregation"},
                   per_block_segregation=list(d.get("per_block_segregation") or []))
