"""Equilibrium checks, social welfare and price-of-anarchy/stability proxies."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dynamics import DynamicsConfig, DynamicsState, best_response_table, run_until_converged, uniform_orbit
from .errors import InputError
from .lattice import TorusGrid
from .payoff import PayoffContext, StrategyProfile, StrategySet, TorusPayoffContext


@dataclass
class EquilibriumReport:
    is_nash: bool
    is_strict: bool
    witness: Optional[tuple] = None  # (node, improving strategy, payoff gain)
    ties: int = 0
    target: Optional[float] = None
    k: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)


def verify_nash(ctx: PayoffContext, profile: Optional[StrategyProfile] = None) -> EquilibriumReport:
    ctx.check(profile)
    prof = ctx.profile
    best, unique, top = best_response_table(ctx)
    T_cur = ctx.payoff_table()[np.arange(ctx.size), prof.idx]
    gain = top - T_cur
    ties = int(np.count_nonzero(~unique))
    target = float(prof.values[0]) if prof.is_uniform() else None
    k = ctx.grid.k if isinstance(ctx, TorusPayoffContext) else None
    if np.any(gain > 0):
        u = int(np.argmax(gain))
        witness = (u, float(ctx.strategies.values[best[u]]), float(gain[u]))
        return EquilibriumReport(False, False, witness, ties, target, k)
    strict = bool(np.all(unique) and np.all(best == prof.idx))
    return EquilibriumReport(True, strict, None, ties, target, k)


def _adjacent(ctx: PayoffContext, u: int, v: int) -> bool:
    if not isinstance(ctx, TorusPayoffContext):
        raise InputError("adjacency is defined on grids only")
    return ctx.grid.distance(u, v) == 1


def pair_collusion_improves(ctx: PayoffContext, profile: StrategyProfile, u, v,
                            target: Optional[float] = None):
    """Joint move of grid neighbours u, v to ``target`` (default k).

    Returns (both strictly gain, gain of u, gain of v).
    """
    ctx.check(profile)
    if not isinstance(ctx, TorusPayoffContext):
        raise InputError("collusion checks are defined on grids only")
    u, v = ctx.grid.index(u), ctx.grid.index(v)
    if not _adjacent(ctx, u, v):
        raise InputError(f"nodes {u} and {v} are not grid neighbours")
    s = ctx.strategies.index_of(ctx.grid.k if target is None else target)
    cur = profile.idx
    du = ctx.payoff_with_changes(u, s, {v: s}) - ctx.payoff(u, cur[u])
    dv = ctx.payoff_with_changes(v, s, {u: s}) - ctx.payoff(v, cur[v])
    return bool(du > 0 and dv > 0), float(du), float(dv)


@dataclass
class CoalitionResult:
    trials: int
    violations: int
    examples: list = field(default_factory=list)


def coalition_spot_check(ctx: PayoffContext, profile: StrategyProfile, coalition_size: int,
                         trials: int, seed=None, radius: Optional[int] = 3,
                         deviation: Optional[float] = None) -> CoalitionResult:
    """Sample coalitions and joint deviations; count Pareto-improving ones.

    Coalitions are a random node plus members drawn within ``radius`` grid
    distance of it (``None`` draws members from the whole population).
    Each member deviates to a random different strategy, or to ``deviation``.
    """
    if coalition_size < 1:
        raise InputError("coalition_size must be >= 1")
    if trials < 1:
        raise InputError("trials must be >= 1")
    ctx.check(profile)
    rng = np.random.default_rng(seed)
    S = ctx.strategies.size
    cur = profile.idx
    res = CoalitionResult(trials, 0)
    for _ in range(trials):
        members = _sample_coalition(ctx, coalition_size, radius, rng)
        if deviation is None:
            dev = {u: int((cur[u] + rng.integers(1, S)) % S) for u in members}
        else:
            dev = {u: ctx.strategies.index_of(deviation) for u in members}
        gains = np.array([ctx.payoff_with_changes(u, dev[u], dev) - ctx.payoff(u, cur[u])
                          for u in members])
        if np.all(gains >= 0) and np.any(gains > 0):
            res.violations += 1
            if len(res.examples) < 10:
                res.examples.append({"members": [int(m) for m in members],
                                     "deviation": [float(ctx.strategies.values[dev[m]]) for m in members],
                                     "gains": gains.tolist()})
    return res


def _sample_coalition(ctx, size, radius, rng):
    n = ctx.size
    if size > n:
        raise InputError("coalition larger than the population")
    first = int(rng.integers(n))
    if radius is None or not isinstance(ctx, TorusPayoffContext):
        others = np.delete(np.arange(n), first)
        return [first] + [int(x) for x in rng.choice(others, size - 1, replace=False)]
    near = ctx.grid.neighbors(first, radius)
    if len(near) < size - 1:
        raise InputError("radius too small for the coalition size")
    return [first] + [int(x) for x in rng.choice(near, size - 1, replace=False)]


def node_payoffs(ctx: PayoffContext, profile: Optional[StrategyProfile] = None) -> np.ndarray:
    """Payoff of every node under its current strategy."""
    ctx.check(profile)
    idx = ctx.profile.idx
    rows = np.arange(ctx.size)
    rec = np.einsum("ub,bu->u", ctx.A, ctx.R[:, idx])
    c = ctx.c[0, idx] if ctx.c.shape[0] == 1 else ctx.c[rows, idx]
    D = ctx.D[0, idx] if ctx.D.shape[0] == 1 else ctx.D[rows, idx]
    return D * rec / c


def social_welfare(ctx: PayoffContext, profile: Optional[StrategyProfile] = None) -> float:
    return float(node_payoffs(ctx, profile).sum())


def welfare_of(ctx: PayoffContext, profile: StrategyProfile) -> float:
    """Bind ``profile`` and return its welfare."""
    ctx.bind(profile)
    return social_welfare(ctx)


def checkerboard_profile(grid: TorusGrid, strategies: StrategySet, k: Optional[float] = None,
                         axis: int = -1) -> StrategyProfile:
    """k where the chosen coordinate is even, k + gamma where it is odd."""
    k = grid.k if k is None else k
    lo = strategies.index_of(k)
    if lo + 1 >= strategies.size:
        raise InputError("k + gamma exceeds r_max")
    parity = grid.coords[:, axis] % 2
    return StrategyProfile(strategies, np.where(parity == 0, lo, lo + 1))


def find_navigable_equilibrium(ctx: PayoffContext, seed=None, max_steps: int = 50,
                               use_dynamics: Optional[bool] = None) -> Optional[float]:
    """Uniform non-zero equilibrium value r* reached by best-response dynamics.

    Full dynamics from a random profile are used when histograms are
    affordable; otherwise the uniform best-response map is iterated from k.
    Returns None if the run does not end in a uniform profile.
    """
    if use_dynamics is None:
        use_dynamics = ctx.size <= 40_000
    if not use_dynamics:
        orbit = uniform_orbit(ctx, float(ctx.grid.k))
        return orbit[-1] if orbit[-1] == orbit[-2] else None
    rng = np.random.default_rng(seed)
    start = StrategyProfile.random(ctx.strategies, ctx.size, rng)
    traj = run_until_converged(DynamicsState.start(ctx, start), DynamicsConfig(max_steps=max_steps))
    if traj.converged and traj.final.is_uniform():
        return float(traj.final.values[0])
    return None


@dataclass
class WelfareReport:
    rows: list
    poa_loglog_slope: float
    pos_slope_vs_log_n: float
    pos_loglog_slope: float

    @property
    def total_welfare(self) -> list:
        return [r["SW_navigable"] for r in self.rows]

    def write_csv(self, fh, header_lines=()) -> None:
        for line in header_lines:
            fh.write(f"# {line}\n")
        cols = ["n", "SW_opt_proxy", "SW_navigable", "SW_random", "PoA", "PoS"]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r["n"]] + [repr(float(r[c])) for c in cols[1:]])


def poa_pos_series(ns, gamma: float = 0.1, k: int = 2, r_max: float = 10.0) -> WelfareReport:
    """Welfare ratios with the checkerboard as the optimum proxy.

    Best equilibrium = r == k, worst = r == 0; slopes are least-squares fits
    of log PoA on log n and of PoS on ln n / log PoS on log n.
    """
    ns = [int(n) for n in ns]
    if len(ns) < 3:
        raise InputError("need at least 3 grid sizes")
    sset = StrategySet.from_gamma(gamma, r_max)
    rows = []
    for n in ns:
        grid = TorusGrid(k, n)
        ctx = TorusPayoffContext(grid, sset)
        opt = welfare_of(ctx, checkerboard_profile(grid, sset))
        nav = welfare_of(ctx, StrategyProfile.uniform(sset, grid.size, k))
        rnd = welfare_of(ctx, StrategyProfile.uniform(sset, grid.size, 0.0))
        rows.append({"n": n, "SW_opt_proxy": opt, "SW_navigable": nav, "SW_random": rnd,
                     "PoA": opt / rnd, "PoS": opt / nav})
    ln = np.log([r["n"] for r in rows])
    poa = np.log([r["PoA"] for r in rows])
    pos = np.array([r["PoS"] for r in rows])
    if np.ptp(ln) == 0:
        slopes = (0.0, 0.0, 0.0)
    else:
        slopes = (float(np.polyfit(ln, poa, 1)[0]), float(np.polyfit(ln, pos, 1)[0]),
                  float(np.polyfit(ln, np.log(pos), 1)[0]))
    return WelfareReport(rows, *slopes)
