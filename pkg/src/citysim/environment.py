"""City model: POIs, blocks with resident income mix, and spatial queries.

Coordinates are planar kilometres. Cities given in lon/lat are projected
with a local equirectangular approximation around a reference point.

In grid mode blocks are ``grid_size`` cells addressed ``"<ix>_<iy>"``; a
point on a cell boundary belongs to the higher-index cell, except on the
outer max edge where it is clamped into the last cell.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CityValidationError, OutOfBounds
from .prompts import POI_CATEGORIES

EARTH_RADIUS_KM = 6371.0088
MIX_TOL = 1e-9


def project(lon: float, lat: float, lon0: float, lat0: float) -> tuple[float, float]:
    """Equirectangular projection to km east/north of ``(lon0, lat0)``."""
    x = math.radians(lon - lon0) * math.cos(math.radians(lat0)) * EARTH_RADIUS_KM
    y = math.radians(lat - lat0) * EARTH_RADIUS_KM
    return x, y


def unproject(x: float, y: float, lon0: float, lat0: float) -> tuple[float, float]:
    lat = lat0 + math.degrees(y / EARTH_RADIUS_KM)
    lon = lon0 + math.degrees(x / (EARTH_RADIUS_KM * math.cos(math.radians(lat0))))
    return lon, lat


def haversine_km(lon1, lat1, lon2, lat2) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))


@dataclass(frozen=True)
class Poi:
    poi_id: str
    name: str
    category: str
    x: float
    y: float
    block_id: str

    @property
    def loc(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Block:
    block_id: str
    income_mix: tuple
    # grid cell (ix, iy) in grid mode, else an optional (xmin, ymin, xmax, ymax)
    cell: tuple | None = None
    bbox: tuple | None = None


def distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


class SpatialIndex:
    """Uniform bucket grid over POI coordinates."""

    def __init__(self, pois: list[Poi], bucket_km: float, origin=(0.0, 0.0)):
        if bucket_km <= 0:
            raise ValueError("bucket size must be positive")
        self.bucket = bucket_km
        self.origin = origin
        self.buckets: dict[tuple, list[Poi]] = {}
        for p in pois:
            self.buckets.setdefault(self._key(p.x, p.y), []).append(p)

    def _key(self, x, y):
        return (math.floor((x - self.origin[0]) / self.bucket),
                math.floor((y - self.origin[1]) / self.bucket))

    def query(self, loc, radius: float, category: str | None = None) -> list[tuple[float, Poi]]:
        bx0, by0 = self._key(loc[0] - radius, loc[1] - radius)
        bx1, by1 = self._key(loc[0] + radius, loc[1] + radius)
        hits = []
        # scan whichever is smaller: the covered bucket range or the occupied buckets
        if (bx1 - bx0 + 1) * (by1 - by0 + 1) <= len(self.buckets):
            keys = ((bx, by) for bx in range(bx0, bx1 + 1) for by in range(by0, by1 + 1))
        else:
            keys = (k for k in self.buckets if bx0 <= k[0] <= bx1 and by0 <= k[1] <= by1)
        for key in keys:
            for p in self.buckets.get(key, ()):
                if category is not None and p.category != category:
                    continue
                d = distance(loc, p.loc)
                if d <= radius:
                    hits.append((d, p))
        hits.sort(key=lambda h: (h[0], h[1].poi_id))
        return hits


@dataclass
class City:
    pois: list[Poi]
    blocks: list[Block]
    grid_size: float | None = 1.0
    origin: tuple = (0.0, 0.0)
    shape: tuple | None = None  # (nx, ny) in grid mode
    name: str = "city"
    projection: dict | None = None  # {"lon0", "lat0"} when built from lon/lat
    _index: SpatialIndex | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.validate()
        self.poi_by_id = {p.poi_id: p for p in self.pois}
        self.block_by_id = {b.block_id: b for b in self.blocks}
        self.block_ids = [b.block_id for b in self.blocks]
        self.block_pos = {bid: i for i, bid in enumerate(self.block_ids)}
        self.bounds = self._bounds()
        bucket = self.grid_size or max(self.bounds[2] - self.bounds[0],
                                       self.bounds[3] - self.bounds[1], 1.0) / 16
        self._index = SpatialIndex(self.pois, bucket, self.bounds[:2])
        self._residences: dict[str, list[str]] = {}
        for p in self.pois:
            if p.category == "residence":
                self._residences.setdefault(p.block_id, []).append(p.poi_id)
        self._by_category: dict[str, list[str]] = {}
        for p in sorted(self.pois, key=lambda p: p.poi_id):
            self._by_category.setdefault(p.category, []).append(p.poi_id)

    @property
    def grid_mode(self) -> bool:
        return self.shape is not None and self.grid_size is not None

    def _bounds(self):
        if self.grid_mode:
            x0, y0 = self.origin
            return (x0, y0, x0 + self.shape[0] * self.grid_size, y0 + self.shape[1] * self.grid_size)
        xs = [p.x for p in self.pois] + [c for b in self.blocks if b.bbox for c in b.bbox[0::2]]
        ys = [p.y for p in self.pois] + [c for b in self.blocks if b.bbox for c in b.bbox[1::2]]
        return (min(xs), min(ys), max(xs), max(ys))

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        """Raise :class:`CityValidationError` naming the first violated path."""
        block_ids = set()
        cells = set()
        for i, b in enumerate(self.blocks):
            path = f"blocks[{i}]"
            if b.block_id in block_ids:
                raise CityValidationError(f"{path}.block_id", f"duplicate block id {b.block_id!r}")
            block_ids.add(b.block_id)
            mix = b.income_mix
            if len(mix) != 5:
                raise CityValidationError(f"{path}.resident_income_mix", "needs 5 proportions")
            if any(m < 0 for m in mix):
                raise CityValidationError(f"{path}.resident_income_mix", "negative proportion")
            if abs(math.fsum(mix) - 1.0) > MIX_TOL:
                raise CityValidationError(f"{path}.resident_income_mix",
                                          f"sums to {math.fsum(mix)!r}, not 1")
            if self.shape is not None:
                if b.cell is None:
                    raise CityValidationError(f"{path}.cell", "grid city block without a cell")
                ix, iy = b.cell
                if not (0 <= ix < self.shape[0] and 0 <= iy < self.shape[1]):
                    raise CityValidationError(f"{path}.cell", f"cell {b.cell} outside grid")
                if (ix, iy) in cells:
                    raise CityValidationError(f"{path}.cell", f"cell {b.cell} assigned twice")
                cells.add((ix, iy))
        if self.shape is not None:
            if self.grid_size is None or self.grid_size <= 0:
                raise CityValidationError("grid_size", "must be positive in grid mode")
            if len(cells) != self.shape[0] * self.shape[1]:
                raise CityValidationError("blocks", "grid cells are not fully covered")
        if not self.pois:
            raise CityValidationError("pois", "city has no POIs")
        poi_ids = set()
        for i, p in enumerate(self.pois):
            path = f"pois[{i}]"
            if p.poi_id in poi_ids:
                raise CityValidationError(f"{path}.poi_id", f"duplicate poi id {p.poi_id!r}")
            poi_ids.add(p.poi_id)
            if p.block_id not in block_ids:
                raise CityValidationError(f"{path}.block_id", f"unknown block {p.block_id!r}")
            if not (math.isfinite(p.x) and math.isfinite(p.y)):
                raise CityValidationError(f"{path}", "non-finite coordinates")
            if self.shape is not None:
                try:
                    actual = self._grid_block(p.x, p.y)
                except OutOfBounds:
                    raise CityValidationError(path, "outside the grid") from None
                if actual != p.block_id:
                    raise CityValidationError(f"{path}.block_id",
                                              f"lies in block {actual!r}, not {p.block_id!r}")

    # -- queries -------------------------------------------------------------

    def in_bounds(self, loc) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= loc[0] <= x1 and y0 <= loc[1] <= y1

    def _check(self, loc):
        if not self.in_bounds(loc):
            raise OutOfBounds(f"location {tuple(loc)} outside city bounds {self.bounds}")

    def nearby_pois(self, loc, radius_km: float, category: str | None = None,
                    with_distance: bool = False) -> list:
        """POIs within ``radius_km`` (inclusive), nearest first, ties by poi_id."""
        self._check(loc)
        if radius_km < 0:
            raise ValueError("radius must be non-negative")
        hits = self._index.query(loc, radius_km, category)
        return hits if with_distance else [p for _, p in hits]

    def _grid_block(self, x, y) -> str:
        x0, y0 = self.origin
        x1, y1 = x0 + self.shape[0] * self.grid_size, y0 + self.shape[1] * self.grid_size
        if not (x0 <= x <= x1 and y0 <= y <= y1):
            raise OutOfBounds(f"location {(x, y)} outside city bounds")
        ix = min(math.floor((x - x0) / self.grid_size), self.shape[0] - 1)
        iy = min(math.floor((y - y0) / self.grid_size), self.shape[1] - 1)
        return f"{ix}_{iy}"

    def cell_of(self, loc) -> tuple[int, int]:
        ix, iy = self.block_of(loc).split("_")
        return int(ix), int(iy)

    def block_of(self, loc) -> str:
        if self.grid_mode:
            return self._grid_block(loc[0], loc[1])
        self._check(loc)
        for b in self.blocks:
            if b.bbox and b.bbox[0] <= loc[0] <= b.bbox[2] and b.bbox[1] <= loc[1] <= b.bbox[3]:
                return b.block_id
        raise OutOfBounds(f"location {tuple(loc)} is not inside any block")

    def poi(self, poi_id: str) -> Poi:
        return self.poi_by_id[poi_id]

    def residences(self, block_id: str) -> list[str]:
        return self._residences.get(block_id, [])

    def pois_of_category(self, category: str) -> list[str]:
        return self._by_category.get(category, [])

    def income_mix_matrix(self) -> np.ndarray:
        return np.array([b.income_mix for b in self.blocks], dtype=float)

    # -- persistence -----------------------------------------------------------

    def to_dict(self) -> dict:
        out = {"name": self.name, "grid_size": self.grid_size, "origin": list(self.origin)}
        if self.projection is not None:
            out["projection"] = dict(self.projection)
        if self.shape is not None:
            out["shape"] = list(self.shape)
        out["blocks"] = []
        for b in self.blocks:
            d = {"block_id": b.block_id, "resident_income_mix": list(b.income_mix)}
            if b.cell is not None:
                d["cell"] = list(b.cell)
            if b.bbox is not None:
                d["bbox"] = list(b.bbox)
            out["blocks"].append(d)
        out["pois"] = [{"poi_id": p.poi_id, "name": p.name, "category": p.category,
                        "x": p.x, "y": p.y, "block_id": p.block_id} for p in self.pois]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "City":
        proj = d.get("projection")
        blocks = []
        for i, b in enumerate(d.get("blocks", [])):
            try:
                blocks.append(Block(str(b["block_id"]), tuple(float(v) for v in b["resident_income_mix"]),
                                    tuple(b["cell"]) if "cell" in b else None,
                                    tuple(b["bbox"]) if "bbox" in b else None))
            except (KeyError, TypeError, ValueError) as exc:
                raise CityValidationError(f"blocks[{i}]", f"malformed block: {exc!r}") from None
        pois = []
        for i, p in enumerate(d.get("pois", [])):
            try:
                if "x" in p:
                    x, y = float(p["x"]), float(p["y"])
                else:
                    if not proj:
                        raise CityValidationError(f"pois[{i}]", "lon/lat POI without a projection")
                    x, y = project(float(p["lon"]), float(p["lat"]), proj["lon0"], proj["lat0"])
                pois.append(Poi(str(p["poi_id"]), p.get("name", str(p["poi_id"])), p["category"],
                                x, y, str(p["block_id"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise CityValidationError(f"pois[{i}]", f"malformed POI: {exc!r}") from None
        shape = tuple(d["shape"]) if d.get("shape") else None
        return cls(pois, blocks, d.get("grid_size", 1.0), tuple(d.get("origin", (0.0, 0.0))),
                   shape, d.get("name", "city"), proj)

    @classmethod
    def load(cls, path) -> "City":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def grid_shape(n_blocks: int) -> tuple[int, int]:
    """Most square ``nx * ny == n_blocks`` factorization with ``nx <= ny``."""
    nx = max(d for d in range(1, math.isqrt(n_blocks) + 1) if n_blocks % d == 0)
    return nx, n_blocks // nx


def gen_synthetic_city(n_blocks: int, pois_per_block: int, segregation_level: float,
                       seed: int, grid_size: float = 1.0) -> City:
    """Grid city with one residence per block plus random venues.

    Each block gets a dominant income quintile (dealt evenly across blocks,
    then shuffled); its resident mix is ``s * onehot + (1 - s) * uniform``.
    """
    if n_blocks < 1 or pois_per_block < 1:
        raise ValueError("n_blocks and pois_per_block must be positive")
    if not 0.0 <= segregation_level <= 1.0:
        raise ValueError("segregation_level must be in [0, 1]")
    rng = np.random.default_rng(seed)
    nx, ny = grid_shape(n_blocks)
    dominant = rng.permutation(np.arange(n_blocks) % 5)
    venues = [c for c in POI_CATEGORIES if c != "residence"]
    s = float(segregation_level)
    blocks, pois = [], []
    width = len(str(n_blocks * pois_per_block))
    for b in range(n_blocks):
        ix, iy = b % nx, b // nx
        bid = f"{ix}_{iy}"
        mix = [(1.0 - s) * 0.2] * 5
        mix[int(dominant[b])] += s
        blocks.append(Block(bid, tuple(mix), (ix, iy)))
        for k in range(pois_per_block):
            category = "residence" if k == 0 else venues[int(rng.integers(len(venues)))]
            # keep venues off the cell edges so their block is unambiguous
            x = (ix + rng.uniform(0.05, 0.95)) * grid_size
            y = (iy + rng.uniform(0.05, 0.95)) * grid_size
            pid = f"P{len(pois):0{width}d}"
            pois.append(Poi(pid, f"{category} {pid}", category, float(x), float(y), bid))
    return City(pois, blocks, grid_size, (0.0, 0.0), (nx, ny), name=f"synthetic-{seed}")
