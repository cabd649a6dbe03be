"""Games and connection-preference fits over geographic populations."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .dynamics import DynamicsConfig, DynamicsState, Trajectory, run_until_converged
from .errors import ConvergenceError, DegenerateFitError, InputError, UndefinedCorrelationError
from .lattice import GeoPopulation, _haversine
from .payoff import GeoPayoffContext, StrategyProfile, StrategySet

log = logging.getLogger(__name__)


@dataclass
class EdgeList:
    """Friendship pairs as node positions (row indices into the population)."""

    pairs: np.ndarray  # (E, 2)
    directed: bool = False

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if np.any(self.pairs[:, 0] == self.pairs[:, 1]):
            raise InputError("self-edges are not allowed")

    def __len__(self):
        return len(self.pairs)

    def validate(self, pop: GeoPopulation) -> None:
        if self.pairs.size and (self.pairs.min() < 0 or self.pairs.max() >= pop.size):
            raise InputError("edge endpoint not in the population")

    def adjacency(self, n: int) -> np.ndarray:
        """Boolean (n, n) friend matrix; symmetric unless directed."""
        adj = np.zeros((n, n), dtype=bool)
        adj[self.pairs[:, 0], self.pairs[:, 1]] = True
        if not self.directed:
            adj[self.pairs[:, 1], self.pairs[:, 0]] = True
        return adj

    @classmethod
    def from_csv(cls, path, pop: GeoPopulation, directed: bool = False) -> "EdgeList":
        pos = {node: i for i, node in enumerate(pop.ids)}
        pairs = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if not {"src", "dst"} <= set(reader.fieldnames or []):
                raise InputError(f"{path}: header must contain src,dst")
            for row in reader:
                try:
                    pairs.append((pos[row["src"]], pos[row["dst"]]))
                except KeyError as e:
                    raise InputError(f"{path}: unknown node id {e.args[0]!r}") from None
        return cls(np.array(pairs, dtype=np.int64).reshape(-1, 2), directed)

    def to_csv(self, path, pop: GeoPopulation) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["src", "dst"])
            for a, b in self.pairs:
                w.writerow([pop.ids[a], pop.ids[b]])


@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    intercept: float
    r2: float
    pairs: int
    edges: tuple  # distance bin edges
    used_bins: int


def _bin_edges(pop: GeoPopulation, bins) -> np.ndarray:
    if np.ndim(bins) == 0:
        nb = int(bins)
        if nb < 3:
            raise InputError("need at least 3 bins")
        hi = float(pop.distances().max())
        if hi <= pop.distance_floor:
            raise DegenerateFitError("all pairs sit at the distance floor")
        edges = np.geomspace(pop.distance_floor, hi, nb + 1)
        edges[-1] = np.nextafter(hi, np.inf)
        return edges
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or len(edges) < 4 or np.any(np.diff(edges) <= 0):
        raise InputError("bin edges must be increasing with at least 3 bins")
    return edges


def pair_counts(pop: GeoPopulation, edges: EdgeList, bins=20, sources=None):
    """Per-bin counts of (all ordered pairs, friend pairs) with u in ``sources``.

    Pairs falling outside the bin range are dropped; with integer ``bins`` every
    ordered pair lands in exactly one bin.
    """
    edges.validate(pop)
    be = _bin_edges(pop, bins)
    d = pop.distances()
    adj = edges.adjacency(pop.size)
    rows = np.arange(pop.size) if sources is None else np.asarray(sources)
    sub, fr = d[rows], adj[rows]
    off = np.ones(sub.shape, dtype=bool)
    off[np.arange(len(rows)), rows] = False
    b = np.searchsorted(be, sub[off], side="right") - 1
    keep = (b >= 0) & (b < len(be) - 1)
    nb = len(be) - 1
    total = np.bincount(b[keep], minlength=nb)
    friends = np.bincount(b[keep], weights=fr[off][keep], minlength=nb).astype(np.int64)
    return be, total, friends


def _fit(be, total, friends) -> ExponentFit:
    ok = (total > 0) & (friends > 0)
    if np.count_nonzero(ok) < 3:
        raise DegenerateFitError(f"only {np.count_nonzero(ok)} non-empty distance bins")
    centre = np.sqrt(be[:-1] * be[1:])
    x = np.log(centre[ok])
    y = np.log(friends[ok] / total[ok])
    # log of a binomial proportion has variance ~ 1/friends
    w = friends[ok].astype(float)
    slope, intercept = np.polyfit(x, y, 1, w=np.sqrt(w))
    yhat = slope * x + intercept
    ybar = np.average(y, weights=w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - float(np.sum(w * (y - yhat) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return ExponentFit(float(-slope), float(intercept), r2, int(total.sum()), tuple(be.tolist()),
                       int(np.count_nonzero(ok)))


def empirical_exponent(pop: GeoPopulation, edges: EdgeList, bins=20, sources=None) -> ExponentFit:
    """Power-law exponent of friendship probability versus distance."""
    return _fit(*pair_counts(pop, edges, bins, sources))


def city_exponents(pop: GeoPopulation, edges: EdgeList, bins=20, min_users: int = 100) -> dict:
    """Fit per city, restricted to pairs whose first node lives in that city."""
    if pop.cities is None:
        raise InputError("population has no city labels")
    be = _bin_edges(pop, bins)
    out = {}
    for city in np.unique(pop.cities):
        members = np.flatnonzero(pop.cities == city)
        if len(members) < min_users:
            log.warning("skipping city %s: %d users < %d", city, len(members), min_users)
            continue
        try:
            out[str(city)] = empirical_exponent(pop, edges, be, sources=members)
        except DegenerateFitError as e:
            log.warning("skipping city %s: %s", city, e)
    return out


def city_centres(pop: GeoPopulation) -> dict:
    if pop.cities is None:
        raise InputError("population has no city labels")
    return {str(c): pop.xy[pop.cities == c].mean(axis=0) for c in np.unique(pop.cities)}


def population_within(pop: GeoPopulation, point, radius: float) -> int:
    x, y = float(point[0]), float(point[1])
    if pop.metric == "planar":
        d = np.hypot(pop.xy[:, 0] - x, pop.xy[:, 1] - y)
    else:
        d = _haversine(x, y, pop.xy[:, 0], pop.xy[:, 1], pop.radius)
    return int(np.count_nonzero(d <= radius))


def density_correlation(city_values: dict, pop: GeoPopulation, radius: float) -> float:
    """Pearson correlation of per-city values with the head count around each city centre.

    ``city_values`` maps city label to an ExponentFit or a plain number.
    """
    if len(city_values) < 3:
        raise InputError("need at least 3 cities")
    centres = city_centres(pop)
    vals, dens = [], []
    for city, v in city_values.items():
        if city not in centres:
            raise InputError(f"unknown city {city!r}")
        vals.append(v.exponent if isinstance(v, ExponentFit) else float(v))
        dens.append(population_within(pop, centres[city], radius))
    vals, dens = np.asarray(vals, dtype=float), np.asarray(dens, dtype=float)
    if np.ptp(vals) == 0 or np.ptp(dens) == 0:
        raise UndefinedCorrelationError("correlation undefined: zero variance")
    return float(np.corrcoef(vals, dens)[0, 1])


@dataclass
class GeoGameResult:
    trajectory: Trajectory
    profile: StrategyProfile
    context: GeoPayoffContext

    @property
    def values(self) -> np.ndarray:
        return self.profile.values

    def city_means(self, pop: GeoPopulation) -> dict:
        if pop.cities is None:
            raise InputError("population has no city labels")
        return {str(c): float(self.values[pop.cities == c].mean()) for c in np.unique(pop.cities)}

    def write_csv(self, path, pop: GeoPopulation, header_lines=()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "strategy"])
            for node, v in zip(pop.ids, self.values):
                w.writerow([node, repr(float(v))])


def geo_game(pop: GeoPopulation, strategies: Optional[StrategySet] = None,
             config: Optional[DynamicsConfig] = None, initial: Optional[StrategyProfile] = None,
             nbins: int = 32, fatal: bool = False,
             settle_fraction: Optional[float] = 0.01) -> GeoGameResult:
    """DRB best-response dynamics with per-node binned payoffs.

    The default strategy set is [0, 5] in steps of 0.1 and the start is
    uniformly random over it.  Updates default to asynchronous sweeps in random
    order: synchronous updates tend to lock into two-cycles here.  Off the lattice a few nodes near payoff ties can
    keep switching forever, so a sweep that moves at most ``settle_fraction``
    of the nodes ends the run (None demands an exact fixed point).
    """
    strategies = StrategySet(10, 5.0) if strategies is None else strategies
    config = DynamicsConfig(mode="async") if config is None else config
    if settle_fraction is not None:
        if not 0 <= settle_fraction < 1:
            raise InputError("settle_fraction must be in [0, 1)")
        config = replace(config, tolerance=int(settle_fraction * pop.size))
    ctx = GeoPayoffContext(pop, strategies, nbins)
    if initial is None:
        initial = StrategyProfile.random(strategies, pop.size, np.random.default_rng(config.seed))
    traj = run_until_converged(DynamicsState.start(ctx, initial.copy(), config.seed), config)
    if not traj.converged:
        msg = f"geo game did not converge in {config.max_steps} steps"
        if fatal:
            raise ConvergenceError(msg)
        log.warning(msg)
    return GeoGameResult(traj, traj.final, ctx)


def write_fits_csv(path, fits: dict, header_lines=()) -> None:
    """Rows of (scope, exponent, r2, pairs); ``fits`` maps scope to ExponentFit."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scope", "exponent", "r2", "pairs"])
        for scope, f in fits.items():
            w.writerow([scope, repr(f.exponent), repr(f.r2), f.pairs])


# -- synthetic populations ---------------------------------------------------

def uniform_disc(count: int, radius: float = 100.0, seed=None, distance_floor: float = 1.0) -> GeoPopulation:
    rng = np.random.default_rng(seed)
    rho = radius * np.sqrt(rng.random(count))
    t = rng.random(count) * 2 * np.pi
    xy = np.column_stack([rho * np.cos(t), rho * np.sin(t)])
    return GeoPopulation([str(i) for i in range(count)], xy, distance_floor=distance_floor)


def city_mixture(sizes, centres, spreads, seed=None, distance_floor: float = 1.0) -> GeoPopulation:
    """Gaussian clusters; each node is labelled with its component."""
    sizes = [int(s) for s in sizes]
    centres = np.asarray(centres, dtype=float).reshape(-1, 2)
    spreads = np.broadcast_to(np.asarray(spreads, dtype=float), (len(sizes),))
    if not len(sizes) == len(centres):
        raise InputError("sizes and centres differ in length")
    rng = np.random.default_rng(seed)
    pts, labels = [], []
    for i, (m, c, s) in enumerate(zip(sizes, centres, spreads)):
        pts.append(c + s * rng.standard_normal((m, 2)))
        labels += [f"c{i}"] * m
    xy = np.vstack(pts)
    return GeoPopulation([str(i) for i in range(len(xy))], xy, distance_floor=distance_floor,
                         cities=np.array(labels))


def core_periphery_world(cities: int = 12, core_size: int = 400, periphery_size: int = 100,
                         extent: float = 600.0, spread: float = 8.0, seed=None,
                         distance_floor: float = 1.0) -> GeoPopulation:
    """A few large cities packed near the centre and smaller ones scattered outside.

    City sizes fall off linearly from ``core_size`` (innermost) to
    ``periphery_size`` (outermost).
    """
    if cities < 3:
        raise InputError("need at least 3 cities")
    rng = np.random.default_rng(seed)
    ring = np.linspace(0.0, extent, cities)
    ang = rng.random(cities) * 2 * np.pi
    centres = np.column_stack([ring * np.cos(ang), ring * np.sin(ang)])
    sizes = np.rint(np.linspace(core_size, periphery_size, cities)).astype(int)
    return city_mixture(sizes, centres, spread, seed=rng, distance_floor=distance_floor)


def wire_power_law(pop: GeoPopulation, exponent, mean_degree: float = 20.0, seed=None) -> EdgeList:
    """Undirected friendships with P(u~v) proportional to d(u,v)^-r.

    ``exponent`` may be a scalar or one value per node; a pair uses the mean
    of its endpoints' values.  Probabilities are scaled to the requested mean
    degree and must stay below 1.
    """
    rng = np.random.default_rng(seed)
    n = pop.size
    r = np.broadcast_to(np.asarray(exponent, dtype=float), (n,))
    iu, ju = np.triu_indices(n, 1)
    d = pop.distances()[iu, ju]
    w = d ** (-(r[iu] + r[ju]) / 2)
    p = w * (mean_degree * n / 2 / w.sum())
    if p.max() > 1:
        raise InputError(f"mean degree {mean_degree} too large for this exponent (p max {p.max():.3g})")
    hit = rng.random(p.size) < p
    return EdgeList(np.column_stack([iu[hit], ju[hit]]))


def wire_cities(pop: GeoPopulation, exponents: dict, mean_degree: float = 20.0, seed=None) -> EdgeList:
    """Wire each city on its own with its exponent; no friendships cross cities."""
    if pop.cities is None:
        raise InputError("population has no city labels")
    rng = np.random.default_rng(seed)
    parts = []
    for city, r in exponents.items():
        members = np.flatnonzero(pop.cities == city)
        if len(members) < 2:
            raise InputError(f"city {city!r} has fewer than 2 nodes")
        sub = GeoPopulation([pop.ids[i] for i in members], pop.xy[members], pop.metric,
                            pop.distance_floor, radius=pop.radius)
        parts.append(members[wire_power_law(sub, r, mean_degree, rng).pairs])
    return EdgeList(np.vstack(parts) if parts else np.empty((0, 2), dtype=np.int64))
