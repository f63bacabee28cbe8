"""Check-in preprocessing and census-based profile sampling.

Input CSV columns: ``user_id,timestamp,lat,lon[,poi_id]`` with ISO-8601
timestamps. Naive timestamps are read in the city's timezone; days are cut
at local midnight.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime
from zoneinfo import ZoneInfo

import numpy as np

from .environment import City, haversine_km, project, unproject
from .errors import InvalidMarginal, NoData, UnparseableRow
from .profile import AGE_BANDS, EDUCATIONS, GENDERS, OCCUPATIONS, StaticProfile

log = logging.getLogger(__name__)

MIN_POINTS_PER_DAY = 4
NIGHT = (22, 6)  # local hours [22:00, 06:00)
MARGINAL_TOL = 1e-6


@dataclass(frozen=True)
class RawCheckin:
    user_id: str
    timestamp: datetime
    lat: float | None = None
    lon: float | None = None
    poi_id: str | None = None

    @property
    def location(self):
        return self.poi_id if self.poi_id else (self.lat, self.lon)


@dataclass
class DayTrajectory:
    user_id: str
    date: str
    points: list  # (aware datetime, RawCheckin)


@dataclass
class IngestSummary:
    rows_read: int = 0
    rows_unparseable: int = 0
    duplicates_dropped: int = 0
    days_dropped: int = 0
    days_kept: int = 0
    users_kept: int = 0
    points_unmatched: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def parse_row(row: dict, tz: ZoneInfo) -> RawCheckin:
    try:
        ts = datetime.fromisoformat(row["timestamp"].strip().replace("Z", "+00:00"))
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=tz)
        user = row["user_id"].strip()
        if not user:
            raise ValueError("empty user_id")
        poi = (row.get("poi_id") or "").strip() or None
        lat = float(row["lat"]) if (row.get("lat") or "").strip() else None
        lon = float(row["lon"]) if (row.get("lon") or "").strip() else None
    except (KeyError, ValueError, AttributeError, TypeError) as exc:
        raise UnparseableRow(f"bad row {row!r}: {exc}") from None
    if poi is None and (lat is None or lon is None):
        raise UnparseableRow(f"row {row!r} has neither coordinates nor poi_id")
    if lat is not None and not -90 <= lat <= 90 or lon is not None and not -180 <= lon <= 180:
        raise UnparseableRow(f"coordinates out of range in {row!r}")
    return RawCheckin(user, ts, lat, lon, poi)


def read_checkins(path, tz: str = "UTC") -> tuple[list[RawCheckin], int]:
    """Parse the CSV, skipping bad rows; returns ``(checkins, n_unparseable)``."""
    zone = ZoneInfo(tz)
    out, bad = [], 0
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                out.append(parse_row(row, zone))
            except UnparseableRow as exc:
                bad += 1
                log.debug("%s", exc)
    return out, bad


def segment_and_filter(checkins, tz: str = "UTC", min_points: int = MIN_POINTS_PER_DAY,
                       summary: IngestSummary | None = None) -> dict[str, list[DayTrajectory]]:
    """Group per user per local day and drop days with fewer than ``min_points``.

    A second check-in with the same user and timestamp is dropped.
    """
    zone = ZoneInfo(tz)
    summary = summary if summary is not None else IngestSummary()
    per_day: dict[tuple, list] = defaultdict(list)
    for c in checkins:
        local = c.timestamp.astimezone(zone)
        per_day[(c.user_id, local.date().isoformat())].append((local, c))
    out: dict[str, list[DayTrajectory]] = {}
    for (user, date) in sorted(per_day):
        points = sorted(per_day[(user, date)], key=lambda p: p[0])  # stable: input order on ties
        kept = []
        for local, c in points:
            if kept and local == kept[-1][0]:
                summary.duplicates_dropped += 1
                log.info("user %s: duplicate timestamp %s dropped", user, local.isoformat())
                continue
            kept.append((local, c))
        if len(kept) < min_points:
            summary.days_dropped += 1
            continue
        summary.days_kept += 1
        out.setdefault(user, []).append(DayTrajectory(user, date, kept))
    summary.users_kept = len(out)
    return out


def flatten(days: dict[str, list[DayTrajectory]]) -> list[RawCheckin]:
    return [c for user in sorted(days) for d in days[user] for _, c in d.points]


def _is_night(local: datetime) -> bool:
    start, end = NIGHT
    return local.hour >= start or local.hour < end


def extract_home(days: list[DayTrajectory], locate=lambda c: c.location):
    """Most visited location; ties -> most night visits, then lowest id."""
    visits, night = Counter(), Counter()
    for d in days:
        for local, c in d.points:
            loc = locate(c)
            if loc is None:
                continue
            visits[loc] += 1
            night[loc] += _is_night(local)
    if not visits:
        raise NoData("no kept days to extract a home from")
    return min(visits, key=lambda loc: (-visits[loc], -night[loc], str(loc)))


def snap_to_poi(city: City, c: RawCheckin, max_km: float = 0.5) -> str | None:
    """POI id for a check-in: its own id if known, else the nearest POI within ``max_km``."""
    if c.poi_id is not None:
        return c.poi_id if c.poi_id in city.poi_by_id else None
    if city.projection is None:
        x, y = c.lon, c.lat
    else:
        x, y = project(c.lon, c.lat, city.projection["lon0"], city.projection["lat0"])
    if not city.in_bounds((x, y)):
        return None
    hits = city.nearby_pois((x, y), max_km, with_distance=True)
    if not hits:
        return None
    poi = hits[0][1]
    if city.projection is not None:
        lon, lat = unproject(poi.x, poi.y, city.projection["lon0"], city.projection["lat0"])
        if haversine_km(c.lon, c.lat, lon, lat) > max_km:
            return None
    return poi.poi_id


# -- census profile sampling ------------------------------------------------------


@dataclass
class CensusMarginals:
    age_band: dict = field(default_factory=dict)
    gender: dict = field(default_factory=dict)
    occupation: dict = field(default_factory=dict)
    education: dict = field(default_factory=dict)
    income_quintile: dict = field(default_factory=dict)

    def validate(self) -> None:
        known = {
            "age_band": {f"{lo}-{hi}" for lo, hi in AGE_BANDS},
            "gender": set(GENDERS),
            "occupation": set(OCCUPATIONS),
            "education": set(EDUCATIONS),
            "income_quintile": {"1", "2", "3", "4", "5"},
        }
        for name, allowed in known.items():
            dist = getattr(self, name)
            if not dist:
                raise InvalidMarginal(f"{name}: empty marginal")
            unknown = {str(k) for k in dist} - allowed
            if unknown:
                raise InvalidMarginal(f"{name}: unknown categories {sorted(unknown)}")
            values = [float(v) for v in dist.values()]
            if any(v < 0 or not math.isfinite(v) for v in values):
                raise InvalidMarginal(f"{name}: negative or non-finite probability")
            if abs(math.fsum(values) - 1.0) > MARGINAL_TOL:
                raise InvalidMarginal(f"{name}: sums to {math.fsum(values)}, not 1")

    @classmethod
    def from_dict(cls, d: dict) -> "CensusMarginals":
        return cls(**{k: {str(kk): float(vv) for kk, vv in d[k].items()}
                      for k in cls.__dataclass_fields__ if k in d})

    @classmethod
    def uniform(cls) -> "CensusMarginals":
        def flat(keys):
            return {str(k): 1.0 / len(keys) for k in keys}
        return cls(flat([f"{lo}-{hi}" for lo, hi in AGE_BANDS]), flat(GENDERS), flat(OCCUPATIONS),
                   flat(EDUCATIONS), flat(range(1, 6)))


def _draw(rng: np.random.Generator, dist: dict, n: int) -> list:
    keys = sorted(dist, key=str)
    p = np.array([dist[k] for k in keys], dtype=float)
    return [keys[i] for i in rng.choice(len(keys), size=n, p=p / p.sum())]


def sample_profiles(census: CensusMarginals, n: int, seed: int, city: City | None = None,
                    first_id: int = 0) -> list[StaticProfile]:
    """Independent per-attribute draws; homes follow the city's income mix if given."""
    if n < 1:
        raise ValueError("n must be >= 1")
    census.validate()
    rng = np.random.default_rng(seed)
    bands = _draw(rng, census.age_band, n)
    genders = _draw(rng, census.gender, n)
    occupations = _draw(rng, census.occupation, n)
    educations = _draw(rng, census.education, n)
    incomes = [int(q) for q in _draw(rng, census.income_quintile, n)]
    ages = [int(rng.integers(int(b.split("-")[0]), int(b.split("-")[1]) + 1)) for b in bands]
    homes = (assign_homes_by_mix(city, incomes, rng) if city is not None else [""] * n)
    return [StaticProfile(first_id + i, ages[i], genders[i], occupations[i], educations[i],
                          incomes[i], homes[i]) for i in range(n)]


def assign_homes_by_mix(city: City, quintiles, rng: np.random.Generator) -> list[str]:
    """Home block per agent with ``P(block | q)`` proportional to the block's share of ``q``."""
    mix = city.income_mix_matrix()
    col_sums = mix.sum(axis=0)
    out = []
    for q in quintiles:
        col = mix[:, q - 1]
        if col_sums[q - 1] <= 0:
            col = np.ones(len(city.blocks))
        cum = np.cumsum(col)
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        out.append(city.block_ids[min(k, len(city.block_ids) - 1)])
    return out


def assign_homes_even(city: City, quintiles) -> list[str]:
    """Deal each income quintile round-robin over blocks so every block gets an even mix."""
    n_blocks = len(city.block_ids)
    out = [""] * len(quintiles)
    seen = Counter()
    order = sorted(range(len(quintiles)), key=lambda i: (quintiles[i], i))
    # agent k of quintile q goes to block (k + offset_q) mod n so block loads stay balanced
    offset = {}
    for i in order:
        q = quintiles[i]
        if q not in offset:
            offset[q] = sum(seen.values())
        out[i] = city.block_ids[(seen[q] + offset[q]) % n_blocks]
        seen[q] += 1
    return out


def run_ingest(input_path, city: City, out_path, tz: str = "UTC", snap_km: float = 0.5) -> dict:
    """CSV check-ins -> trajectory JSONL; returns the summary dict."""
    checkins, bad = read_checkins(input_path, tz)
    summary = IngestSummary(rows_read=len(checkins) + bad, rows_unparseable=bad)
    days = segment_and_filter(checkins, tz, summary=summary)
    homes = {}
    with open(out_path, "w") as fh:
        for user in sorted(days):
            for d in days[user]:
                for local, c in d.points:
                    poi = snap_to_poi(city, c, snap_km)
                    if poi is None:
                        summary.points_unmatched += 1
                        continue
                    fh.write(json.dumps({"agent": user, "t": local.isoformat(), "poi": poi,
                                         "block": city.poi(poi).block_id}) + "\n")
            try:
                homes[user] = extract_home(days[user], lambda c: snap_to_poi(city, c, snap_km))
            except NoData:
                pass
    out = summary.to_dict()
    out["homes_found"] = len(homes)
    return out
