"""Limited-information dynamics: friend-based estimation and payoff-feedback search."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import Trajectory
from .errors import InputError
from .lattice import TorusGrid
from .payoff import StrategyProfile, StrategySet, TorusPayoffContext
from .routing import sample_long_links


@dataclass(frozen=True)
class FriendEstimationConfig:
    q: int = 30
    noise: float = 0.0  # standard deviation of gaussian observation noise
    seed: Optional[int] = None

    def __post_init__(self):
        if self.q < 1:
            raise InputError("q must be >= 1")
        if self.noise < 0:
            raise InputError("noise must be non-negative")


@dataclass(frozen=True)
class FeedbackSearchConfig:
    q: int = 30
    seed: Optional[int] = None

    def __post_init__(self):
        if self.q < 1:
            raise InputError("q must be >= 1")


def estimate_strategy(observed, v, grid: TorusGrid, strategies: Optional[StrategySet] = None) -> float:
    """Inverse-distance weighted mean of observed (friend, value) pairs at node v.

    When v is itself an observed friend its observed value is returned.
    With ``strategies`` the result is clipped and rounded into the set.
    """
    if not observed:
        raise InputError("no observations")
    v = grid.index(v)
    num = den = 0.0
    direct = [val for f, val in observed if grid.index(f) == v]
    if direct:
        est = float(np.mean(direct))
    else:
        for f, val in observed:
            w = 1.0 / grid.distance(v, f)
            num += val * w
            den += w
        est = num / den
    if strategies is None:
        return est
    return float(strategies.values[strategies.nearest(est)])


class _ShiftedTables:
    """Views of origin-centred tables translated to any node without copying."""

    def __init__(self, grid: TorusGrid, table: np.ndarray):
        self.grid = grid
        self.big = np.tile(table, (2,) * grid.k)

    def at(self, u: int) -> np.ndarray:
        n = self.grid.n
        c = self.grid.coords[u]
        return self.big[tuple(slice(n - x, 2 * n - x) for x in c)]


@dataclass
class LearningState:
    ctx: TorusPayoffContext
    profile: StrategyProfile
    rng: np.random.Generator
    step: int = 0
    # feedback-search memory
    sign: Optional[np.ndarray] = None
    best_payoff: Optional[np.ndarray] = None
    accepted: list = field(default_factory=list)

    @classmethod
    def start(cls, ctx: TorusPayoffContext, profile: StrategyProfile, seed=None):
        return cls(ctx, profile.copy(), np.random.default_rng(seed))

    @property
    def grid(self) -> TorusGrid:
        return self.ctx.grid


def friends_dynamics_step(state: LearningState, cfg: FriendEstimationConfig) -> int:
    """One synchronous step of friend-based estimation; returns the changed count."""
    ctx, grid, sset = state.ctx, state.grid, state.ctx.strategies
    vals = state.profile.values
    friends = sample_long_links(grid, vals, cfg.q, state.rng)
    obs = vals[friends]
    if cfg.noise > 0:
        obs = np.clip(obs + state.rng.normal(0.0, cfg.noise, obs.shape), 0.0, sset.r_max)
    inv = grid.distance_template.astype(float)
    inv[(0,) * grid.k] = np.inf
    inv = _ShiftedTables(grid, 1.0 / inv)
    dist = _ShiftedTables(grid, grid.distance_template)
    W, R = ctx.W, ctx.R
    c, D = ctx.c[0], ctx.D[0]
    nD = grid.max_distance
    new = np.empty(grid.size, dtype=np.int64)
    for u in range(grid.size):
        num = np.zeros((grid.n,) * grid.k)
        den = np.zeros_like(num)
        for f, val in zip(friends[u], obs[u]):
            w = inv.at(f)
            num += val * w
            den += w
        est = (num / np.where(den > 0, den, 1.0)).ravel()
        f_u, o_u = friends[u], obs[u]
        # friends are observed directly (duplicates averaged)
        uniq, pos = np.unique(f_u, return_inverse=True)
        est[uniq] = np.bincount(pos, weights=o_u) / np.bincount(pos)
        est_idx = sset.nearest(est)
        d = dist.at(u).ravel()
        m = d > 0
        lv = d[m] - 1
        a = np.bincount(lv, weights=W[lv, est_idx[m]], minlength=nD)
        row = D * (a @ R) / c
        new[u] = int(np.argmax(row))
    changed = int(np.count_nonzero(new != state.profile.idx))
    state.profile.assign(new)
    state.step += 1
    return changed


def run_friend_dynamics(state: LearningState, cfg: FriendEstimationConfig, steps: int) -> Trajectory:
    traj = Trajectory()
    traj.record(0, 0, state.profile)
    for t in range(1, steps + 1):
        changed = friends_dynamics_step(state, cfg)
        traj.record(t, changed, state.profile)
        traj.steps = t
    traj.final = state.profile.copy()
    return traj


def empirical_payoff(distances, reciprocal) -> float:
    """Mean link distance times the fraction of links reciprocated."""
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise InputError("need at least one probe link")
    return float(d.mean() * np.mean(np.asarray(reciprocal, dtype=float)))


def _probe(grid: TorusGrid, values: np.ndarray, q: int, rng) -> np.ndarray:
    """Empirical payoff of every node from one round of freshly sampled links."""
    links = sample_long_links(grid, values, q, rng)
    n = grid.size
    src = np.repeat(np.arange(n), q)
    dst = links.ravel()
    # u -> v is reciprocated when u is among v's own q endpoints
    recip = (links[dst] == src[:, None]).any(axis=1).reshape(n, q)
    d = grid.pair_distances(src, dst).reshape(n, q)
    return d.mean(axis=1) * recip.mean(axis=1)


def feedback_search_step(state: LearningState, cfg: FeedbackSearchConfig) -> int:
    """Every node tries one nearby strategy and keeps it if the payoff improves."""
    grid, sset = state.grid, state.ctx.strategies
    idx = state.profile.idx
    n = grid.size
    if state.best_payoff is None:
        state.best_payoff = _probe(grid, state.profile.values, cfg.q, state.rng)
        state.sign = np.where(state.rng.random(n) < 0.5, -1, 1)
    mag = state.rng.integers(1, sset.g + 1, n)  # (0, 1] in units of gamma
    # a step that cannot move (at a boundary) is turned around
    blocked = ((state.sign < 0) & (idx == 0)) | ((state.sign > 0) & (idx == sset.size - 1))
    state.sign = np.where(blocked, -state.sign, state.sign)
    prop = np.clip(idx + state.sign * mag, 0, sset.size - 1)
    pay = _probe(grid, prop / sset.g, cfg.q, state.rng)
    better = pay > state.best_payoff
    state.best_payoff = np.where(better, pay, state.best_payoff)
    state.sign = np.where(better, state.sign, -state.sign)
    new = np.where(better, prop, idx)
    changed = int(np.count_nonzero(new != idx))
    state.profile.assign(new)
    state.step += 1
    return changed


def run_feedback_search(state: LearningState, cfg: FeedbackSearchConfig, steps: int,
                        record_every: int = 1) -> Trajectory:
    traj = Trajectory()
    traj.record(0, 0, state.profile)
    for t in range(1, steps + 1):
        changed = feedback_search_step(state, cfg)
        if t % record_every == 0 or t == steps:
            traj.record(t, changed, state.profile)
        traj.steps = t
    traj.final = state.profile.copy()
    return traj
