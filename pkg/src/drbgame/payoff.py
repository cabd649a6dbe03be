"""Strategy space and payoff evaluation for the small-world formation game.

The distance-reciprocity payoff of node u playing r is

    pi_u(r) = D_u(r) * sum_v p_u(v, r) p_v(u, r_v)

with p_u(v, r) = d(u,v)^-r / c_u(r).  Grouping the sum by distance level j
gives  sum_j j^-r / c_u(r) * A[u, j]  where

    A[u, j] = sum_{v : d(u,v) = j} j^-r_v / c_v(r_v)

is the shell-by-strategy histogram Y_u(j, s) already contracted with the
weights j^-s / c(s).  Contexts keep A in sync with a bound profile so that a
whole row of payoffs over the strategy set costs one small mat-vec.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ConsistencyError, InputError, UnsupportedGeometryError
from .lattice import GeoPopulation, TorusGrid

# dense FFT kernels for the exact count rebuild are kept below this many floats
_KERNEL_BUDGET = 4 * 10**7


@dataclass(frozen=True)
class StrategySet:
    """Values {0, 1/g, 2/g, ..., r_max}; strategies are handled as integer indices."""

    g: int = 10
    r_max: float = 10.0

    def __post_init__(self):
        if int(self.g) != self.g or self.g < 2:
            raise InputError(f"granularity denominator g must be an integer >= 2, got {self.g}")
        steps = self.r_max * self.g
        if self.r_max <= 0 or abs(steps - round(steps)) > 1e-9:
            raise InputError(f"r_max={self.r_max} is not a positive multiple of 1/{self.g}")

    @classmethod
    def from_gamma(cls, gamma: float, r_max: float = 10.0) -> "StrategySet":
        g = 1.0 / gamma
        if abs(g - round(g)) > 1e-9:
            raise InputError(f"granularity {gamma} is not of the form 1/g")
        return cls(int(round(g)), r_max)

    @property
    def gamma(self) -> float:
        return 1.0 / self.g

    @property
    def size(self) -> int:
        return int(round(self.r_max * self.g)) + 1

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.size) / self.g

    def index_of(self, value) -> int:
        x = float(value) * self.g
        i = int(round(x))
        if abs(x - i) > 1e-9 or not 0 <= i < self.size:
            raise InputError(f"{value} is not in the strategy set (g={self.g}, r_max={self.r_max})")
        return i

    def nearest(self, values) -> np.ndarray:
        """Round real values into the set (clipping to [0, r_max])."""
        v = np.clip(np.asarray(values, dtype=float), 0.0, self.r_max)
        return np.rint(v * self.g).astype(np.int64)

    def value(self, idx) -> float:
        return idx / self.g


class StrategyProfile:
    """Per-node strategy indices with a version stamp bumped on every mutation."""

    def __init__(self, strategies: StrategySet, idx):
        idx = np.array(idx, dtype=np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= strategies.size):
            raise InputError("profile entry outside the strategy set")
        self.strategies = strategies
        self._idx = idx
        self._idx.flags.writeable = False
        self.version = 0

    @classmethod
    def uniform(cls, strategies: StrategySet, size: int, value: float) -> "StrategyProfile":
        return cls(strategies, np.full(size, strategies.index_of(value)))

    @classmethod
    def from_values(cls, strategies: StrategySet, values) -> "StrategyProfile":
        values = np.asarray(values, dtype=float)
        idx = np.rint(values * strategies.g).astype(np.int64)
        if np.any(np.abs(values * strategies.g - idx) > 1e-9):
            raise InputError("profile values are not multiples of the granularity")
        return cls(strategies, idx)

    @classmethod
    def random(cls, strategies: StrategySet, size: int, rng, high: Optional[float] = None):
        top = strategies.size if high is None else strategies.index_of(high) + 1
        return cls(strategies, rng.integers(0, top, size))

    @property
    def idx(self) -> np.ndarray:
        return self._idx

    @property
    def values(self) -> np.ndarray:
        return self._idx / self.strategies.g

    def __len__(self):
        return self._idx.size

    def __getitem__(self, u):
        return self._idx[u]

    def set(self, u: int, s: int) -> None:
        if not 0 <= s < self.strategies.size:
            raise InputError(f"strategy index {s} outside the set")
        self._idx.flags.writeable = True
        self._idx[u] = s
        self._idx.flags.writeable = False
        self.version += 1

    def assign(self, idx) -> None:
        idx = np.asarray(idx, dtype=np.int64).ravel()
        if idx.shape != self._idx.shape:
            raise InputError("profile length mismatch")
        self._idx = idx.copy()
        self._idx.flags.writeable = False
        self.version += 1

    def copy(self) -> "StrategyProfile":
        return StrategyProfile(self.strategies, self._idx)

    def is_uniform(self) -> bool:
        return bool(np.all(self._idx == self._idx[0]))

    def __eq__(self, other):
        if not isinstance(other, StrategyProfile):
            return NotImplemented
        return self.strategies == other.strategies and np.array_equal(self._idx, other._idx)

    def __repr__(self):
        vals = np.unique(self.values)
        head = ", ".join(f"{v:g}" for v in vals[:6])
        return f"StrategyProfile(n={len(self)}, distinct=[{head}{', ...' if len(vals) > 6 else ''}])"


# -- payoff models -----------------------------------------------------------

@dataclass(frozen=True)
class DRB:
    """Distance times reciprocity."""


@dataclass(frozen=True)
class RoutingNeg:
    """Negated total greedy delivery time, estimated by Monte Carlo."""

    samples: int = 5
    q: int = 10
    p: int = 1
    targets: Optional[int] = 200
    # "direct" routes every candidate on sampled graphs; "first-hop" averages u's
    # first hop exactly (needs all other nodes on one strategy)
    estimator: str = "direct"

    def __post_init__(self):
        if self.samples < 1 or self.q < 1 or self.p < 1:
            raise InputError("samples, q and p must all be >= 1")
        if self.estimator not in ("direct", "first-hop"):
            raise InputError(f"unknown routing estimator {self.estimator!r}")


@dataclass(frozen=True)
class RoutingCost(RoutingNeg):
    """Routing payoff minus lam times the expected long-range link length."""

    lam: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if self.lam < 0:
            raise InputError("cost factor must be non-negative")


PayoffModel = Union[DRB, RoutingNeg, RoutingCost]


# -- contexts ----------------------------------------------------------------

class PayoffContext:
    """Shell tables plus the histogram A for one bound profile.

    Subclasses provide ``reps`` (representative distance per shell), ``c`` and
    ``D`` (shape (1, S) on the torus, (N, S) for geo populations) and the
    histogram maintenance.
    """

    size: int
    strategies: StrategySet
    reps: np.ndarray
    c: np.ndarray
    D: np.ndarray

    def __init__(self):
        self._profile: Optional[StrategyProfile] = None
        self._version = -1
        self.A: Optional[np.ndarray] = None
        S = self.strategies.values
        self.R = self.reps[:, None] ** (-S[None, :])  # rep^-r, shape (B, S)

    # profile binding
    @property
    def profile(self) -> StrategyProfile:
        if self._profile is None:
            raise ConsistencyError("no profile bound to this context")
        return self._profile

    def bind(self, profile: StrategyProfile) -> "PayoffContext":
        if len(profile) != self.size:
            raise InputError(f"profile has {len(profile)} entries, geometry has {self.size} nodes")
        if profile.strategies != self.strategies:
            raise InputError("profile uses a different strategy set")
        self._profile = profile
        self.A = self._build_histogram(profile.idx)
        self._version = profile.version
        return self

    def check(self, profile: Optional[StrategyProfile] = None) -> None:
        p = self.profile
        if profile is not None and profile is not p:
            raise ConsistencyError("histogram was built from a different profile object")
        if p.version != self._version:
            raise ConsistencyError("profile mutated after the histogram was built; rebind or use move()")

    def move(self, u: int, s: int) -> None:
        """Change u's strategy and update the histogram incrementally."""
        self.check()
        old = int(self._profile.idx[u])
        if old == s:
            return
        self._apply_move(u, old, s)
        self._profile.set(u, s)
        self._version = self._profile.version

    # tables
    def c_row(self, u: int = 0) -> np.ndarray:
        return self.c[u if self.c.shape[0] > 1 else 0]

    def D_row(self, u: int = 0) -> np.ndarray:
        return self.D[u if self.D.shape[0] > 1 else 0]

    def reciprocity_table(self, nodes=None) -> np.ndarray:
        self.check()
        A = self.A if nodes is None else self.A[nodes]
        c = self.c if (nodes is None or self.c.shape[0] == 1) else self.c[nodes]
        return (A @ self.R) / c

    def payoff_table(self, nodes=None) -> np.ndarray:
        """Payoff of each node (rows) for each strategy it could play (columns)."""
        D = self.D if (nodes is None or self.D.shape[0] == 1) else self.D[nodes]
        return D * self.reciprocity_table(nodes)

    def payoffs(self, u: int) -> np.ndarray:
        self.check()
        return self.D_row(u) * (self.A[u] @ self.R) / self.c_row(u)

    def payoff(self, u: int, s: int) -> float:
        self.check()
        return float(self.D_row(u)[s] * (self.A[u] @ self.R[:, s]) / self.c_row(u)[s])

    def payoff_with_changes(self, u: int, s: int, changes: dict) -> float:
        """Payoff of u playing s when the nodes in ``changes`` switch strategies."""
        self.check()
        a = self.A[u].copy()
        cur = self._profile.idx
        for v, sv in changes.items():
            if v == u or sv == cur[v]:
                continue
            b = self._bin(u, v)
            a[b] += self._weight(v, b, sv) - self._weight(v, b, cur[v])
        return float(self.D_row(u)[s] * (a @ self.R[:, s]) / self.c_row(u)[s])

    def uniform_payoffs(self, s: int, u: int = 0) -> np.ndarray:
        """Payoff row of u when every other node plays s (no histogram needed)."""
        counts = self._shell_counts(u)
        a = counts * self._weights_for(s, u)
        return self.D_row(u) * (a @ self.R) / self.c_row(u)

    # subclass hooks
    def _build_histogram(self, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _apply_move(self, u: int, old: int, new: int) -> None:
        raise NotImplementedError

    def _bin(self, u: int, v: int) -> int:
        raise NotImplementedError

    def _weight(self, v: int, b: int, s: int) -> float:
        raise NotImplementedError

    def _shell_counts(self, u: int) -> np.ndarray:
        raise NotImplementedError

    def _weights_for(self, s: int, u: int) -> np.ndarray:
        raise NotImplementedError


class TorusPayoffContext(PayoffContext):
    """Payoff context on a wraparound grid; c and D are node independent."""

    def __init__(self, grid: TorusGrid, strategies: StrategySet):
        if grid.size < 3:
            raise InputError("payoffs need at least 3 nodes")
        self.grid = grid
        self.strategies = strategies
        self.size = grid.size
        b = grid.shell_sizes[1:].astype(float)
        j = np.arange(1, grid.max_distance + 1, dtype=float)
        keep = b > 0  # all levels are populated on a torus, kept for safety
        self.levels, self.counts, self.reps = j[keep], b[keep], j[keep]
        S = strategies.values
        jr = self.reps[:, None] ** (-S[None, :])
        c = self.counts @ jr
        D = (self.counts * self.reps) @ jr / c
        self.c, self.D = c[None, :], D[None, :]
        self.W = jr / c[None, :]  # contribution j^-s / c(s), shape (B, S)
        self._kernel_hat = None
        super().__init__()

    def _shell_counts(self, u=0):
        return self.counts

    def _weights_for(self, s, u=0):
        return self.W[:, s]

    def _bin(self, u, v):
        return self.grid.distance(u, v) - 1

    def _weight(self, v, b, s):
        return self.W[b, s]

    def _kernels(self):
        if self._kernel_hat is None:
            g = self.grid
            shape = (g.n,) * g.k
            t = g.distance_template
            axes = tuple(range(g.k))
            self._kernel_hat = np.stack(
                [np.fft.rfftn((t == j).astype(float), axes=axes) for j in range(1, g.max_distance + 1)])
        return self._kernel_hat

    def _build_histogram(self, idx):
        g = self.grid
        shape = (g.n,) * g.k
        distinct = np.unique(idx)
        kernel_floats = g.max_distance * g.size
        if len(distinct) <= 16 and kernel_floats <= _KERNEL_BUDGET:
            return self._build_by_counts(idx.reshape(shape), distinct)
        return self._build_by_rolls(idx.reshape(shape))

    def _build_by_counts(self, field, distinct):
        # Y_s[j] = number of shell-j nodes playing s, exact after rounding
        g = self.grid
        axes = tuple(range(1, g.k + 1))
        K = self._kernels()
        A = np.zeros((g.size, g.max_distance))
        for s in distinct:
            ind = np.fft.rfftn((field == s).astype(float))
            Y = np.fft.irfftn(K * ind[None], s=field.shape, axes=axes)
            Y = np.rint(Y).reshape(g.max_distance, g.size)
            A += Y.T * self.W[:, s][None, :]
        return A

    def _build_by_rolls(self, field):
        g = self.grid
        offsets, start = g.shell_offsets
        axes = tuple(range(g.k))
        A = np.empty((g.size, g.max_distance))
        for j in range(1, g.max_distance + 1):
            G = self.W[j - 1][field]
            acc = np.zeros(field.shape)
            for off in offsets[start[j]:start[j + 1]]:
                acc += np.roll(G, tuple(-off), axis=axes)
            A[:, j - 1] = acc.ravel()
        return A

    def _apply_move(self, u, old, new):
        d = self.grid.distances_from(u)
        others = np.flatnonzero(d)
        lv = d[others] - 1
        self.A[others, lv] += self.W[lv, new] - self.W[lv, old]

    def shell_histogram(self, u: int) -> np.ndarray:
        """Exact Y_u(j, s) counts, shape (n_D, S), recomputed from the profile."""
        idx = self.profile.idx
        d = self.grid.distances_from(u)
        m = d > 0
        Y = np.zeros((self.grid.max_distance, self.strategies.size), dtype=np.int64)
        np.add.at(Y, (d[m] - 1, idx[m]), 1)
        return Y


class GeoPayoffContext(PayoffContext):
    """Payoff context over a geographic population with log-binned shells."""

    def __init__(self, pop: GeoPopulation, strategies: StrategySet, nbins: int = 32):
        if pop.size < 3:
            raise InputError("payoffs need at least 3 nodes")
        self.pop = pop
        self.strategies = strategies
        self.size = pop.size
        self.edges, self.reps, self.bins = pop.shell_bins(nbins)
        nb = len(self.reps)
        self._u, self._v = np.nonzero(self.bins >= 0)
        self._b = self.bins[self._u, self._v]
        self._ub = self._u * nb + self._b
        self.cnt = np.bincount(self._ub, minlength=self.size * nb).reshape(self.size, nb).astype(float)
        S = strategies.values
        jr = self.reps[:, None] ** (-S[None, :])
        self.c = self.cnt @ jr
        self.D = (self.cnt * self.reps[None, :]) @ jr / self.c
        super().__init__()

    def _shell_counts(self, u=0):
        return self.cnt[u]

    def uniform_payoffs(self, s: int, u: int = 0) -> np.ndarray:
        b = self.bins[u]
        m = b >= 0
        a = np.zeros(len(self.reps))
        np.add.at(a, b[m], self.reps[b[m]] ** (-self.strategies.values[s]) / self.c[m, s])
        return self.D[u] * (a @ self.R) / self.c[u]

    def _bin(self, u, v):
        return int(self.bins[u, v])

    def _weight(self, v, b, s):
        return self.R[b, s] / self.c[v, s]

    def _build_histogram(self, idx):
        n = self.size
        # contribution of v to any u in bin b: rep_b^-s_v / c_v(s_v)
        nb = len(self.reps)
        Wv = self.R[:, idx].T / self.c[np.arange(n), idx][:, None]  # (N, B)
        A = np.bincount(self._ub, weights=Wv[self._v, self._b], minlength=n * nb)
        return A.reshape(n, nb)

    def _apply_move(self, u, old, new):
        b = self.bins[:, u]
        m = b >= 0
        rows = np.flatnonzero(m)
        bb = b[m]
        self.A[rows, bb] += self.R[bb, new] / self.c[u, new] - self.R[bb, old] / self.c[u, old]


def make_context(geometry, strategies: StrategySet, **kw) -> PayoffContext:
    if isinstance(geometry, TorusGrid):
        return TorusPayoffContext(geometry, strategies)
    if isinstance(geometry, GeoPopulation):
        return GeoPayoffContext(geometry, strategies, **kw)
    raise InputError(f"unsupported geometry {type(geometry).__name__}")


# -- operations --------------------------------------------------------------

def _node(ctx: PayoffContext, u) -> int:
    if isinstance(ctx, TorusPayoffContext):
        return ctx.grid.index(u)
    u = int(u)
    if not 0 <= u < ctx.size:
        raise InputError(f"node {u} out of range")
    return u


def normalization_constant(ctx: PayoffContext, r: float, u=0) -> float:
    return float(ctx.c_row(_node(ctx, u))[ctx.strategies.index_of(r)])


def mean_link_distance(ctx: PayoffContext, r: float, u=0) -> float:
    return float(ctx.D_row(_node(ctx, u))[ctx.strategies.index_of(r)])


def reciprocity(ctx: PayoffContext, u, r_u: float, profile: StrategyProfile) -> float:
    ctx.check(profile)
    u = _node(ctx, u)
    s = ctx.strategies.index_of(r_u)
    return float(ctx.A[u] @ ctx.R[:, s] / ctx.c_row(u)[s])


def drb_payoff(ctx: PayoffContext, u, r_u: float, profile: StrategyProfile) -> float:
    ctx.check(profile)
    u = _node(ctx, u)
    return ctx.payoff(u, ctx.strategies.index_of(r_u))


def link_probability(ctx: PayoffContext, u, v, r_u: float) -> float:
    u, v = _node(ctx, u), _node(ctx, v)
    if u == v:
        raise InputError("no self links")
    s = ctx.strategies.index_of(r_u)
    if isinstance(ctx, TorusPayoffContext):
        d = ctx.grid.distance(u, v)
        return float(d ** (-ctx.strategies.values[s]) / ctx.c_row(u)[s])
    # geo: the binned representative distance is the one the payoff uses
    return float(ctx.R[ctx.bins[u, v], s] / ctx.c_row(u)[s])


def routing_payoff(ctx: PayoffContext, u, r_u: float, profile: StrategyProfile,
                   model: RoutingNeg, seed=0) -> tuple[float, float]:
    """Monte Carlo estimate (and standard error) of -sum_v t_uv."""
    est, err = routing_payoff_curve(ctx, u, profile, model, [r_u], seed=seed)
    return float(est[0]), float(err[0])


def routing_payoff_curve(ctx: PayoffContext, u, profile: StrategyProfile, model: RoutingNeg,
                         strategies=None, seed=0):
    """Routing payoffs of u for several candidate strategies.

    All candidates share the sampled graphs of the other nodes and the
    uniform draws behind u's own links (common random numbers), so the
    differences between candidates are far less noisy than the levels.
    """
    from .routing import delivery_times_from, first_hop_delivery_times

    if not isinstance(ctx, TorusPayoffContext):
        raise UnsupportedGeometryError("routing payoffs are defined on grids only")
    u = _node(ctx, u)
    sset = ctx.strategies
    cand = sset.values if strategies is None else np.asarray(strategies, dtype=float)
    for r in cand:
        sset.index_of(r)
    if model.estimator == "first-hop":
        rest = np.delete(profile.values, u)
        if np.any(rest != rest[0]):
            raise InputError("the first-hop estimator needs all other nodes on one strategy")
        times, errs = first_hop_delivery_times(ctx.grid, rest[0], u, cand, p=model.p, q=model.q,
                                               graphs=model.samples, targets=model.targets, seed=seed)
    else:
        times, errs = delivery_times_from(ctx.grid, profile.values, u, cand, p=model.p, q=model.q,
                                          graphs=model.samples, targets=model.targets, seed=seed)
    scale = ctx.size - 1
    est = -times * scale
    err = errs * scale
    if isinstance(model, RoutingCost) and model.lam:
        est = est - model.lam * np.array([ctx.D_row(u)[sset.index_of(r)] for r in cand])
    return est, err


def routing_cost_payoff(ctx: PayoffContext, u, r_u: float, profile: StrategyProfile,
                        model: RoutingCost, seed=0) -> tuple[float, float]:
    return routing_payoff(ctx, u, r_u, profile, model, seed=seed)


def naive_payoff_table(grid: TorusGrid, strategy_values: np.ndarray,
                       profile_values: np.ndarray) -> np.ndarray:
    """Direct O(N^2 S) evaluation of the payoff table from coordinates.

    Shares nothing with the shell path: distances come from explicit
    coordinate differences and every normalization is a row sum.
    ``profile_values`` may be one profile (N,) or a batch (P, N); the result
    is (N, S) or (P, N, S).
    """
    x = grid.coords
    diff = np.abs(x[:, None, :] - x[None, :, :])
    d = np.minimum(diff, grid.n - diff).sum(axis=2).astype(float)
    N = len(x)
    off = ~np.eye(N, dtype=bool)
    dd = np.where(off, d, 1.0)
    S = np.asarray(strategy_values, dtype=float)
    pv = np.asarray(profile_values, dtype=float)
    single = pv.ndim == 1
    pv = np.atleast_2d(pv)
    # p_v(u, r_v) for every ordered pair (row u, column v), per profile
    pow_v = np.where(off[None], dd[None] ** (-pv[:, None, :]), 0.0)
    back = pow_v / pow_v.sum(axis=1, keepdims=True)  # column sums are c_v(r_v)
    # p_u(v, r) for every candidate r: (N, S, N)
    pu = np.where(off[:, None, :], dd[:, None, :] ** (-S[None, :, None]), 0.0)
    pu /= pu.sum(axis=2, keepdims=True)
    dist = np.einsum("usv,uv->us", pu, d)
    rec = np.einsum("usv,puv->pus", pu, back)
    out = dist[None] * rec
    return out[0] if single else out
