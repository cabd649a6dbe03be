"""Realized small-world graphs and greedy routing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError
from .lattice import TorusGrid


@dataclass
class RealizedGraph:
    grid: TorusGrid
    p: int
    long: np.ndarray  # (N, q) long-range endpoints
    seed: Optional[int] = None

    @property
    def q(self) -> int:
        return self.long.shape[1]

    def local_offsets(self) -> np.ndarray:
        offsets, start = self.grid.shell_offsets
        hi = start[min(self.p, self.grid.max_distance) + 1]
        return offsets[1:hi]

    def contacts(self, u: int) -> np.ndarray:
        return np.concatenate([self.grid.neighbors(u, self.p), self.long[u]])


def shell_cdf(grid: TorusGrid, r: float) -> np.ndarray:
    """Cumulative probability of landing in shells 1..n_D under exponent r."""
    b = grid.shell_sizes[1:].astype(float)
    j = np.arange(1, grid.max_distance + 1, dtype=float)
    w = b * j ** (-float(r))
    cdf = np.cumsum(w) / w.sum()
    cdf[-1] = 1.0
    return cdf


def endpoints_from_uniforms(grid: TorusGrid, sources: np.ndarray, r: float,
                            u_shell: np.ndarray, u_member: np.ndarray) -> np.ndarray:
    """Map two uniform draws per link to an endpoint: shell by inverse CDF, then a
    uniformly chosen member of that shell."""
    offsets, start = grid.shell_offsets
    j = np.searchsorted(shell_cdf(grid, r), u_shell, side="right") + 1
    j = np.minimum(j, grid.max_distance)
    b = grid.shell_sizes[j]
    k = start[j] + np.minimum((u_member * b).astype(np.int64), b - 1)
    return grid.translate(sources, offsets[k])


def sample_endpoints(grid: TorusGrid, sources: np.ndarray, r: float, rng) -> np.ndarray:
    sources = np.asarray(sources)
    return endpoints_from_uniforms(grid, sources, r, rng.random(sources.shape), rng.random(sources.shape))


def sample_long_links(grid: TorusGrid, strategy_values, q: int, rng) -> np.ndarray:
    """(N, q) endpoints, each drawn independently with probability ~ d^-r_u."""
    if q < 1:
        raise InputError("q must be >= 1")
    vals = np.asarray(strategy_values, dtype=float)
    if vals.shape != (grid.size,):
        raise InputError("one strategy per node required")
    out = np.empty((grid.size, q), dtype=np.int64)
    for r in np.unique(vals):
        nodes = np.flatnonzero(vals == r)
        src = np.repeat(nodes[:, None], q, axis=1)
        out[nodes] = sample_endpoints(grid, src, r, rng)
    return out


def sample_graph(grid: TorusGrid, strategy_values, p: int = 1, q: int = 1, seed=None) -> RealizedGraph:
    if p < 0:
        raise InputError("local radius p must be >= 0")
    rng = np.random.default_rng(seed)
    return RealizedGraph(grid, p, sample_long_links(grid, strategy_values, q, rng), seed)


def route_many(graph: RealizedGraph, sources, targets, max_hops: Optional[int] = None) -> np.ndarray:
    """Greedy hop counts for many (source, target) pairs at once.

    Each hop moves to the contact closest to the target; ties go to the
    smallest node index.
    """
    if graph.p < 1:
        raise InputError("greedy routing needs local contacts (p >= 1) to guarantee progress")
    grid = graph.grid
    cur = np.array(sources, dtype=np.int64).ravel()
    tgt = np.array(targets, dtype=np.int64).ravel()
    cur, tgt = np.broadcast_arrays(cur, tgt)
    cur = cur.copy()
    if np.any(cur == tgt):
        raise InputError("source and target must differ")
    hops = np.zeros(cur.shape, dtype=np.int64)
    local = graph.local_offsets()
    limit = grid.max_distance if max_hops is None else max_hops
    active = np.arange(cur.size)
    for _ in range(limit):
        if active.size == 0:
            break
        c, t = cur[active], tgt[active]
        cand = np.concatenate([grid.translate(c[:, None], local[None, :, :]), graph.long[c]], axis=1)
        d = grid.pair_distances(cand, t[:, None])
        key = d * grid.size + cand
        nxt = cand[np.arange(len(c)), np.argmin(key, axis=1)]
        cur[active] = nxt
        hops[active] += 1
        active = active[nxt != t]
    if active.size:
        raise RuntimeError("greedy routing failed to terminate")
    return hops


def greedy_route(graph: RealizedGraph, source: int, target: int) -> int:
    return int(route_many(graph, [source], [target])[0])


def random_pairs(n_nodes: int, count: int, rng) -> tuple[np.ndarray, np.ndarray]:
    s = rng.integers(0, n_nodes, count)
    t = (s + rng.integers(1, n_nodes, count)) % n_nodes
    return s, t


def expected_delivery_time(grid: TorusGrid, strategy_values, p: int = 1, q: int = 1,
                           pairs: int = 1000, graphs: int = 1, seed=None) -> tuple[float, float]:
    """Mean greedy hops (and standard error) over sampled graphs and pairs."""
    if pairs < 1 or graphs < 1:
        raise InputError("sampling plan must be non-empty")
    rng = np.random.default_rng(seed)
    hops = []
    for _ in range(graphs):
        g = RealizedGraph(grid, p, sample_long_links(grid, strategy_values, q, rng))
        s, t = random_pairs(grid.size, pairs, rng)
        hops.append(route_many(g, s, t))
    h = np.concatenate(hops).astype(float)
    return float(h.mean()), float(h.std(ddof=1) / np.sqrt(h.size)) if h.size > 1 else 0.0


def delivery_times_from(grid: TorusGrid, strategy_values, u: int, candidates, p: int = 1,
                        q: int = 10, graphs: int = 5, targets: Optional[int] = 200,
                        seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Mean delivery time from u over targets, for each candidate strategy of u.

    Candidates share the other nodes' sampled links and the uniform draws behind
    u's own links. ``targets=None`` routes to every other node.
    """
    rng = np.random.default_rng(seed)
    cand = np.asarray(candidates, dtype=float)
    per = [[] for _ in cand]
    others = np.delete(np.arange(grid.size), u)
    for _ in range(graphs):
        g = RealizedGraph(grid, p, sample_long_links(grid, strategy_values, q, rng))
        if targets is None or targets >= others.size:
            tg = others
        else:
            tg = rng.choice(others, size=targets, replace=False)
        us, um = rng.random(q), rng.random(q)
        for i, r in enumerate(cand):
            g.long[u] = endpoints_from_uniforms(grid, np.full(q, u), r, us, um)
            per[i].append(route_many(g, np.full(tg.size, u), tg))
    means = np.empty(len(cand))
    errs = np.empty(len(cand))
    for i, chunks in enumerate(per):
        h = np.concatenate(chunks).astype(float)
        means[i] = h.mean()
        errs[i] = h.std(ddof=1) / np.sqrt(h.size) if h.size > 1 else 0.0
    return means, errs


def fit_log_squared(ns, hops) -> tuple[float, float]:
    """Least-squares fit hops = a * ln(n)^2 through the origin; returns (a, R^2)."""
    x = np.log(np.asarray(ns, dtype=float)) ** 2
    y = np.asarray(hops, dtype=float)
    a = float(x @ y / (x @ x))
    ss_res = float(np.sum((y - a * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return a, 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def hops_to_origin(grid: TorusGrid, strategy_value: float, p: int = 1, q: int = 1,
                   graphs: int = 20, seed=None) -> np.ndarray:
    """Mean greedy hops from every node to node 0 when everyone plays one strategy.

    By translation symmetry entry w is also the expected time from w + t to t.
    """
    rng = np.random.default_rng(seed)
    vals = np.full(grid.size, float(strategy_value))
    src = np.arange(1, grid.size)
    total = np.zeros(grid.size)
    for _ in range(graphs):
        g = RealizedGraph(grid, p, sample_long_links(grid, vals, q, rng))
        total[1:] += route_many(g, src, np.zeros_like(src))
    return total / graphs


def first_hop_delivery_times(grid: TorusGrid, others: float, u: int, candidates, p: int = 1,
                             q: int = 10, graphs: int = 20, targets: Optional[int] = 500,
                             seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Mean delivery time from u when every other node plays ``others``.

    u's own links only decide the first hop, and greedy routing never comes
    back to u, so the time is 1 + H(first hop) with H the remaining time of
    the symmetric network.  H is estimated once by simulation; the first hop
    is averaged exactly over u's q independent links.  All candidates share
    H and the sampled targets, so their differences carry little noise.
    """
    if p < 1:
        raise InputError("greedy routing needs local contacts (p >= 1)")
    rng = np.random.default_rng(seed)
    H = hops_to_origin(grid, others, p, q, graphs, rng)
    cand = np.asarray(candidates, dtype=float)
    N = grid.size
    du = grid.distances_from(u)
    j = np.arange(1, grid.max_distance + 1, dtype=float)
    b = grid.shell_sizes[1:].astype(float)
    # link probability of each node per candidate: (S, N)
    w = j[None, :] ** (-cand[:, None])
    w /= (w * b[None, :]).sum(axis=1, keepdims=True)
    pi = np.zeros((len(cand), N))
    pi[:, du > 0] = w[:, du[du > 0] - 1]
    others_idx = np.delete(np.arange(N), u)
    if targets is None or targets >= others_idx.size:
        tg = others_idx
    else:
        tg = rng.choice(others_idx, size=targets, replace=False)
    nbrs = grid.neighbors(u, p)
    allnodes = np.arange(N)
    per_target = np.empty((len(tg), len(cand)))
    for i, t in enumerate(tg):
        key = grid.pair_distances(allnodes, np.full(N, t)) * N + allnodes
        k0 = key[nbrs].min()
        rest = H[grid.translate(allnodes, -grid.coords[t])]
        closer = np.flatnonzero(key < k0)
        order = closer[np.argsort(key[closer])]
        pr = pi[:, order]
        F = np.cumsum(pr, axis=1) - pr
        win = (1.0 - F) ** q - np.clip(1.0 - F - pr, 0.0, None) ** q
        miss = np.clip(1.0 - pr.sum(axis=1), 0.0, None) ** q
        nb = nbrs[np.argmin(key[nbrs])]
        per_target[i] = 1.0 + win @ rest[order] + miss * rest[nb]
    means = per_target.mean(axis=0)
    errs = per_target.std(axis=0, ddof=1) / np.sqrt(len(tg)) if len(tg) > 1 else np.zeros(len(cand))
    return means, errs
