"""Best responses, synchronous/asynchronous dynamics and perturbations."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import InputError
from .payoff import DRB, PayoffContext, PayoffModel, StrategyProfile, routing_payoff_curve

QUANTILES = (5, 25, 50, 75, 95)


class BestResponse(NamedTuple):
    strategy: float
    index: int
    payoff: float
    unique: bool


def _pick(row: np.ndarray) -> tuple[int, bool]:
    # first maximum = smallest strategy; unique iff the maximum is strict
    i = int(np.argmax(row))
    return i, int(np.count_nonzero(row == row[i])) == 1


def best_response(ctx: PayoffContext, u: int, profile: Optional[StrategyProfile] = None,
                  model: PayoffModel = DRB(), seed=0) -> BestResponse:
    ctx.check(profile)
    if isinstance(model, DRB):
        row = ctx.payoffs(u)
    else:
        row, _ = routing_payoff_curve(ctx, u, ctx.profile, model, seed=seed)
    i, unique = _pick(row)
    return BestResponse(float(ctx.strategies.values[i]), i, float(row[i]), unique)


def best_response_table(ctx: PayoffContext, nodes=None):
    """Best-response index, strictness flag and payoff for every node (DRB)."""
    T = ctx.payoff_table(nodes)
    best = np.argmax(T, axis=1)
    top = T[np.arange(len(T)), best]
    unique = np.count_nonzero(T == top[:, None], axis=1) == 1
    return best, unique, top


def uniform_best_response(ctx: PayoffContext, s: float) -> BestResponse:
    """Best response of a node when every other node plays s (torus contexts)."""
    row = ctx.uniform_payoffs(ctx.strategies.index_of(s))
    i, unique = _pick(row)
    return BestResponse(float(ctx.strategies.values[i]), i, float(row[i]), unique)


def uniform_fixed_points(ctx: PayoffContext) -> list[float]:
    """All s with B(r_-u = s) = s, i.e. the uniform equilibria."""
    vals = ctx.strategies.values
    return [float(v) for v in vals if uniform_best_response(ctx, v).index == ctx.strategies.index_of(v)]


def uniform_orbit(ctx: PayoffContext, start: float, max_steps: int = 1000) -> list[float]:
    """Iterate the uniform best-response map from r = start until it repeats."""
    seen = [float(start)]
    for _ in range(max_steps):
        nxt = uniform_best_response(ctx, seen[-1]).strategy
        if nxt in seen:
            seen.append(nxt)
            break
        seen.append(nxt)
    return seen


@dataclass
class DynamicsConfig:
    mode: str = "sync"  # sync | async
    order: str = "random"  # round-robin | random (fresh permutation each round)
    seed: Optional[int] = None
    max_steps: int = 1000
    payoff_model: PayoffModel = field(default_factory=DRB)
    tolerance: int = 0  # a sweep changing at most this many nodes counts as settled

    def __post_init__(self):
        if self.mode not in ("sync", "async"):
            raise InputError(f"unknown dynamics mode {self.mode!r}")
        if self.order not in ("round-robin", "random"):
            raise InputError(f"unknown async order {self.order!r}")
        if self.max_steps < 1:
            raise InputError("max_steps must be >= 1")
        if self.tolerance < 0:
            raise InputError("tolerance must be >= 0")


@dataclass
class DynamicsState:
    ctx: PayoffContext
    step: int = 0
    ties: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @classmethod
    def start(cls, ctx: PayoffContext, profile: StrategyProfile, seed=None) -> "DynamicsState":
        ctx.bind(profile)
        return cls(ctx, rng=np.random.default_rng(seed))

    @property
    def profile(self) -> StrategyProfile:
        return self.ctx.profile


def sync_step(state: DynamicsState, model: PayoffModel = DRB()) -> int:
    """Every node best-responds to the pre-step profile; returns the changed count."""
    ctx = state.ctx
    ctx.check()
    if isinstance(model, DRB):
        best, unique, _ = best_response_table(ctx)
    else:
        picks = [best_response(ctx, u, model=model, seed=state.step) for u in range(ctx.size)]
        best = np.array([b.index for b in picks])
        unique = np.array([b.unique for b in picks])
    state.ties += int(np.count_nonzero(~unique))
    changed = int(np.count_nonzero(best != ctx.profile.idx))
    state.step += 1
    if changed:
        prof = ctx.profile
        prof.assign(best)
        ctx.bind(prof)
    return changed


def async_step(state: DynamicsState, u: int, model: PayoffModel = DRB()) -> bool:
    """Node u switches to its best response immediately; True if it changed."""
    br = best_response(state.ctx, u, model=model, seed=state.step)
    if not br.unique:
        state.ties += 1
    if br.index == state.ctx.profile.idx[u]:
        return False
    state.ctx.move(u, br.index)
    return True


def profile_summary(values: np.ndarray) -> dict:
    q = np.percentile(values, QUANTILES)
    return {"quantiles": [round(float(x), 10) for x in q], "mean": float(np.mean(values))}


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    final: Optional[StrategyProfile] = None
    converged: bool = False
    steps: int = 0  # steps that changed at least one node
    ties: int = 0

    def record(self, step: int, changed: int, profile: StrategyProfile) -> None:
        self.records.append({"step": step, "changed": changed, **profile_summary(profile.values)})

    def to_jsonl(self, fh, header: Optional[dict] = None) -> None:
        if header is not None:
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for rec in self.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @property
    def final_values(self) -> np.ndarray:
        return self.final.values


def run_until_converged(state: DynamicsState, config: DynamicsConfig = DynamicsConfig(),
                        on_step=None) -> Trajectory:
    """Iterate sweeps until one full sweep changes nothing or max_steps is hit.

    ``on_step(step, profile)`` is called after each sweep with the new profile.
    """
    traj = Trajectory()
    traj.record(0, 0, state.profile)
    order_rng = np.random.default_rng(config.seed)
    model = config.payoff_model
    for _ in range(config.max_steps):
        if config.mode == "sync":
            changed = sync_step(state, model)
        else:
            n = state.ctx.size
            order = order_rng.permutation(n) if config.order == "random" else np.arange(n)
            changed = sum(async_step(state, int(u), model) for u in order)
            state.step += 1
        if changed == 0:
            traj.converged = True
            break
        traj.steps += 1
        traj.record(traj.steps, changed, state.profile)
        if on_step is not None:
            on_step(traj.steps, state.profile)
        if changed <= config.tolerance:
            traj.converged = True
            break
    traj.final = state.profile.copy()
    traj.ties = state.ties
    return traj


@dataclass
class PerturbationSpec:
    """Each node is resampled with ``probability``.

    Replacements are uniform over [low, high] intersected with the strategy set,
    or uniform over ``choices`` when given.
    """

    probability: float
    low: float = 0.0
    high: Optional[float] = None
    choices: Optional[Sequence[float]] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise InputError("perturbation probability must be in [0, 1]")
        if self.choices is not None and len(self.choices) == 0:
            raise InputError("finite perturbation set must be non-empty")


def perturb(profile: StrategyProfile, spec: PerturbationSpec, rng=None):
    """Return (perturbed copy, boolean mask of perturbed nodes)."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    sset = profile.strategies
    n = len(profile)
    mask = rng.random(n) < spec.probability
    if spec.choices is not None:
        pool = np.array([sset.index_of(v) for v in spec.choices])
    else:
        high = sset.r_max if spec.high is None else spec.high
        if spec.low < 0 or high > sset.r_max or spec.low > high:
            raise InputError(f"replacement range [{spec.low}, {high}] outside [0, {sset.r_max}]")
        lo = int(np.ceil(spec.low * sset.g - 1e-9))
        hi = int(np.floor(high * sset.g + 1e-9))
        pool = np.arange(lo, hi + 1)
    idx = profile.idx.copy()
    idx[mask] = pool[rng.integers(0, len(pool), int(mask.sum()))]
    return StrategyProfile(sset, idx), mask


def uniform_value(profile: StrategyProfile) -> Optional[float]:
    return float(profile.values[0]) if profile.is_uniform() else None
