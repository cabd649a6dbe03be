"""Geometry: wraparound grids and geographic point populations."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateFitError, InputError

MAX_DIM = 4
MAX_NODES = 10**7
EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class TorusGrid:
    """k-dimensional n^k lattice with wraparound edges.

    Nodes are addressed either by a coordinate tuple or by the row-major
    linear index of that tuple.
    """

    k: int
    n: int

    def __post_init__(self):
        if not 1 <= self.k <= MAX_DIM:
            raise InputError(f"dimension k must be in [1, {MAX_DIM}], got {self.k}")
        if self.n < 2:
            raise InputError(f"side length n must be >= 2, got {self.n}")
        if self.n**self.k > MAX_NODES:
            raise InputError(f"n^k = {self.n**self.k} exceeds the {MAX_NODES} node cap")

    @property
    def size(self) -> int:
        return self.n**self.k

    @property
    def max_distance(self) -> int:
        return self.k * (self.n // 2)

    @cached_property
    def _wrap(self) -> np.ndarray:
        # wrapped 1D distance of an offset in [0, n)
        a = np.arange(self.n)
        return np.minimum(a, self.n - a)

    @cached_property
    def coords(self) -> np.ndarray:
        """(N, k) coordinate array in row-major order."""
        return np.stack(np.unravel_index(np.arange(self.size), (self.n,) * self.k), axis=1)

    def index(self, node) -> int:
        if isinstance(node, (int, np.integer)):
            i = int(node)
            if not 0 <= i < self.size:
                raise InputError(f"node index {i} out of range [0, {self.size})")
            return i
        c = tuple(int(x) for x in node)
        if len(c) != self.k or any(not 0 <= x < self.n for x in c):
            raise InputError(f"coordinate {node} invalid for {self.k}D grid with n={self.n}")
        return int(np.ravel_multi_index(c, (self.n,) * self.k))

    def coord(self, node) -> tuple:
        i = self.index(node)
        return tuple(int(x) for x in np.unravel_index(i, (self.n,) * self.k))

    def distance(self, u, v) -> int:
        cu, cv = self.coord(u), self.coord(v)
        return int(sum(min(abs(a - b), self.n - abs(a - b)) for a, b in zip(cu, cv)))

    def distances_from(self, u) -> np.ndarray:
        """Grid distance from u to every node, as an (N,) int array."""
        cu = np.asarray(self.coord(u))
        return self._wrap[(self.coords - cu) % self.n].sum(axis=1)

    def pair_distances(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Vectorized distance between index arrays us and vs (broadcasting)."""
        cu = self.coords[np.asarray(us)]
        cv = self.coords[np.asarray(vs)]
        return self._wrap[(cu - cv) % self.n].sum(axis=-1)

    @cached_property
    def distance_template(self) -> np.ndarray:
        """Distance from the origin to every node, shaped (n,)*k."""
        t = np.zeros((self.n,) * self.k, dtype=np.int64)
        for axis in range(self.k):
            shape = [1] * self.k
            shape[axis] = self.n
            t = t + self._wrap.reshape(shape)
        return t

    @cached_property
    def shell_sizes(self) -> np.ndarray:
        """b[j] for j = 0..n_D; b[0] = 1 (the node itself)."""
        return np.bincount(self.distance_template.ravel(), minlength=self.max_distance + 1)

    def _check_level(self, j: int) -> int:
        if not 1 <= j <= self.max_distance:
            raise InputError(f"distance level {j} outside [1, {self.max_distance}]")
        return int(j)

    def shell_size(self, j: int) -> int:
        return int(self.shell_sizes[self._check_level(j)])

    @cached_property
    def shell_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Offsets from the origin sorted by distance, plus shell start positions.

        ``offsets[start[j]:start[j+1]]`` are exactly the offsets at distance j.
        """
        flat = self.distance_template.ravel()
        order = np.argsort(flat, kind="stable")
        offsets = self.coords[order]
        start = np.concatenate([[0], np.cumsum(self.shell_sizes)])
        return offsets, start

    def shell_members(self, u, j: int) -> np.ndarray:
        j = self._check_level(j)
        offsets, start = self.shell_offsets
        cu = np.asarray(self.coord(u))
        pts = (offsets[start[j]:start[j + 1]] + cu) % self.n
        return np.ravel_multi_index(pts.T, (self.n,) * self.k)

    def translate(self, u: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        """Index of node u + offset (mod n); broadcasts u (..) against offsets (.., k)."""
        pts = (self.coords[np.asarray(u)] + offsets) % self.n
        return np.ravel_multi_index(np.moveaxis(pts, -1, 0), (self.n,) * self.k)

    def neighbors(self, u, radius: int = 1) -> np.ndarray:
        """All nodes within grid distance 1..radius of u, sorted by index."""
        offsets, start = self.shell_offsets
        hi = start[min(radius, self.max_distance) + 1]
        return np.sort(self.translate(self.index(u), offsets[1:hi]))


def _haversine(lon1, lat1, lon2, lat2, radius):
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    a = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass
class GeoPopulation:
    """Coordinate-tagged nodes with a minimum pairwise distance.

    For ``metric="great-circle"`` x is longitude and y latitude, in degrees,
    and distances are in the units of ``radius`` (km by default).
    """

    ids: list
    xy: np.ndarray
    metric: str = "planar"
    distance_floor: Optional[float] = None
    cities: Optional[np.ndarray] = None
    radius: float = EARTH_RADIUS_KM
    _raw: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        self.ids = list(self.ids)
        if len(self.ids) != len(self.xy):
            raise InputError("ids and coordinates differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise InputError("duplicate node ids")
        if self.metric not in ("planar", "great-circle"):
            raise InputError(f"unknown distance metric {self.metric!r}")
        if self.cities is not None:
            self.cities = np.asarray(self.cities)
            if len(self.cities) != len(self.ids):
                raise InputError("city labels must cover every node")
        if self.distance_floor is None:
            raw = self.raw_distances()
            nz = raw[raw > 0]
            self.distance_floor = float(nz.min()) if nz.size else 1.0
        if not self.distance_floor > 0:
            raise InputError("distance_floor must be positive")

    @property
    def size(self) -> int:
        return len(self.ids)

    def raw_distances(self) -> np.ndarray:
        if self._raw is None:
            x, y = self.xy[:, 0], self.xy[:, 1]
            if self.metric == "planar":
                self._raw = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
            else:
                self._raw = _haversine(x[:, None], y[:, None], x[None, :], y[None, :], self.radius)
        return self._raw

    def distances(self) -> np.ndarray:
        """Floored pairwise distances; the diagonal is 0."""
        d = np.maximum(self.raw_distances(), self.distance_floor)
        np.fill_diagonal(d, 0.0)
        return d

    def geo_distance(self, u: int, v: int) -> float:
        if not (0 <= u < self.size and 0 <= v < self.size):
            raise InputError("node out of range")
        if u == v:
            raise InputError("self-distance is undefined")
        return float(max(self.raw_distances()[u, v], self.distance_floor))

    def shell_bins(self, nbins: int = 32):
        """Log-spaced distance buckets standing in for grid shells.

        Returns (edges, representative distances, (N, N) bin index matrix with
        -1 on the diagonal).
        """
        d = self.distances()
        off = ~np.eye(self.size, dtype=bool)
        lo = self.distance_floor
        hi = float(d[off].max()) if self.size > 1 else lo
        if hi <= lo * (1 + 1e-12):
            edges = np.array([lo, lo])
            reps = np.array([lo])
            idx = np.where(off, 0, -1)
            return edges, reps, idx
        edges = np.geomspace(lo, hi, nbins + 1)
        reps = np.sqrt(edges[:-1] * edges[1:])
        idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, nbins - 1)
        idx[~off] = -1
        return edges, reps, idx

    @classmethod
    def from_csv(cls, path, metric: str = "planar", distance_floor: Optional[float] = None):
        ids, xy, cities = [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            cols = reader.fieldnames or []
            if not {"id", "x", "y"} <= set(cols):
                raise InputError(f"{path}: header must contain id,x,y (got {cols})")
            has_city = "city" in cols
            for row in reader:
                ids.append(row["id"])
                xy.append((float(row["x"]), float(row["y"])))
                if has_city:
                    cities.append(row["city"])
        return cls(ids, np.array(xy), metric=metric, distance_floor=distance_floor,
                   cities=np.array(cities) if cities else None)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "x", "y"] + (["city"] if self.cities is not None else []))
            for i, node in enumerate(self.ids):
                row = [node, repr(float(self.xy[i, 0])), repr(float(self.xy[i, 1]))]
                if self.cities is not None:
                    row.append(self.cities[i])
                w.writerow(row)


@dataclass(frozen=True)
class DimensionFit:
    alpha: float
    intercept: float
    residual: float
    pairs: int


def fractional_dimension(pop: GeoPopulation, sample_pairs: int, rng_seed=None,
                         max_quantile: float = 1.0) -> DimensionFit:
    """Fit |{w : d(u,w) <= d(u,v)}| = c * d(u,v)^alpha over random pairs.

    ``max_quantile`` drops the sampled pairs whose distance exceeds that
    quantile; boundary saturation otherwise flattens the far end of the curve.
    """
    if pop.size < 3:
        raise InputError("need at least 3 nodes")
    if sample_pairs < 1:
        raise InputError("sample_pairs must be >= 1")
    rng = np.random.default_rng(rng_seed)
    d = pop.distances()
    u = rng.integers(0, pop.size, sample_pairs)
    v = (u + rng.integers(1, pop.size, sample_pairs)) % pop.size
    dist = d[u, v]
    sorted_rows = {}
    counts = np.empty(sample_pairs)
    for i, (a, b) in enumerate(zip(u, v)):
        row = sorted_rows.get(a)
        if row is None:
            row = sorted_rows[a] = np.sort(np.delete(d[a], a))
        counts[i] = np.searchsorted(row, d[a, b], side="right")
    if max_quantile < 1.0:
        keep = dist <= np.quantile(dist, max_quantile)
        dist, counts = dist[keep], counts[keep]
    x, y = np.log(dist), np.log(counts)
    if np.ptp(x) == 0:
        raise DegenerateFitError("all sampled distances are equal")
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return DimensionFit(float(slope), float(intercept), resid, int(len(x)))


def grid_points(side: int, spacing: float = 1.0) -> np.ndarray:
    """Planar coordinates of a side x side square lattice."""
    a = np.arange(side) * spacing
    xx, yy = np.meshgrid(a, a, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def ring_points(count: int, radius: Optional[float] = None) -> np.ndarray:
    """Evenly spaced points on a circle (unit spacing along the arc by default)."""
    radius = count / (2 * math.pi) if radius is None else radius
    t = np.arange(count) * 2 * math.pi / count
    return np.column_stack([radius * np.cos(t), radius * np.sin(t)])


def as_population(xy: Sequence, **kw) -> GeoPopulation:
    xy = np.asarray(xy, dtype=float)
    return GeoPopulation([str(i) for i in range(len(xy))], xy, **kw)
