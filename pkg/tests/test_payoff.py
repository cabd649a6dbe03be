import numpy as np
import pytest

from drbgame import (DRB, ConsistencyError, InputError, RoutingNeg, StrategyProfile, StrategySet,
                     TorusGrid, make_context)
from drbgame.errors import UnsupportedGeometryError
from drbgame.lattice import as_population
from drbgame.payoff import (drb_payoff, link_probability, mean_link_distance, naive_payoff_table,
                            normalization_constant, reciprocity, routing_payoff)

S = StrategySet(10, 10.0)


def test_strategy_set():
    assert S.size == 101
    assert S.index_of(2.1) == 21
    assert StrategySet.from_gamma(0.5, 4.0).values.tolist() == [0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4]
    with pytest.raises(InputError):
        S.index_of(2.15)
    with pytest.raises(InputError):
        S.index_of(10.1)
    with pytest.raises(InputError):
        StrategySet.from_gamma(0.3)
    with pytest.raises(InputError):
        StrategySet(10, 2.05)


def test_normalization_at_zero_counts_nodes():
    for k, n in [(1, 9), (2, 10), (3, 4)]:
        ctx = make_context(TorusGrid(k, n), S)
        assert normalization_constant(ctx, 0.0) == pytest.approx(n**k - 1)


def test_mean_distance_ring_of_five():
    ctx = make_context(TorusGrid(1, 5), S)
    assert mean_link_distance(ctx, 0.0) == pytest.approx(1.5)


def test_mean_distance_decreasing():
    ctx = make_context(TorusGrid(2, 30), S)
    D = ctx.D_row()
    assert np.all(np.diff(D) < 0)
    assert D[-1] == pytest.approx(1.0, abs=1e-2)


def test_tiny_lattice_rejected():
    with pytest.raises(InputError):
        make_context(TorusGrid(1, 2), S)


def test_link_probabilities_sum_to_one():
    grid = TorusGrid(2, 7)
    ctx = make_context(grid, S)
    for r in (0.0, 1.3, 4.0):
        total = sum(link_probability(ctx, 5, v, r) for v in range(grid.size) if v != 5)
        assert total == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InputError):
        link_probability(ctx, 5, 5, 1.0)


def test_reciprocity_of_uniform_random_links():
    grid = TorusGrid(2, 12)
    ctx = make_context(grid, S)
    prof = StrategyProfile.uniform(S, grid.size, 0.0)
    ctx.bind(prof)
    for r in (0.0, 2.0, 7.5):
        assert reciprocity(ctx, 0, r, prof) == pytest.approx(1 / (grid.size - 1))


def test_payoff_is_distance_times_reciprocity():
    grid = TorusGrid(2, 9)
    ctx = make_context(grid, S)
    prof = StrategyProfile.random(S, grid.size, np.random.default_rng(3), high=4.0)
    ctx.bind(prof)
    u, r = 17, 1.7
    assert drb_payoff(ctx, u, r, prof) == pytest.approx(
        mean_link_distance(ctx, r) * reciprocity(ctx, u, r, prof), rel=1e-12)


@pytest.mark.parametrize("k,n", [(1, 31), (2, 8), (3, 4)])
def test_matches_naive_sum(k, n):
    grid = TorusGrid(k, n)
    ctx = make_context(grid, S)
    prof = StrategyProfile.random(S, grid.size, np.random.default_rng(k))
    ctx.bind(prof)
    fast = ctx.payoff_table()
    slow = naive_payoff_table(grid, S.values, prof.values)
    np.testing.assert_allclose(fast, slow, rtol=1e-11, atol=0)


def test_incremental_move_equals_rebuild():
    grid = TorusGrid(2, 14)
    ctx = make_context(grid, S)
    rng = np.random.default_rng(5)
    prof = StrategyProfile.random(S, grid.size, rng)
    ctx.bind(prof)
    for _ in range(40):
        ctx.move(int(rng.integers(grid.size)), int(rng.integers(S.size)))
    inc = ctx.A.copy()
    fresh = make_context(grid, S).bind(prof.copy())
    np.testing.assert_allclose(inc, fresh.A, rtol=1e-12, atol=1e-15)


def test_fft_and_roll_histograms_agree():
    grid = TorusGrid(2, 10)
    ctx = make_context(grid, S)
    prof = StrategyProfile.random(S, grid.size, np.random.default_rng(9))
    ctx.bind(prof)
    field = prof.idx.reshape(10, 10)
    a = ctx._build_by_counts(field, np.unique(prof.idx))
    b = ctx._build_by_rolls(field)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_stale_histogram_detected():
    grid = TorusGrid(1, 9)
    ctx = make_context(grid, S)
    prof = StrategyProfile.uniform(S, grid.size, 1.0)
    ctx.bind(prof)
    prof.set(3, 5)
    with pytest.raises(ConsistencyError):
        ctx.payoff(0, 0)
    other = StrategyProfile.uniform(S, grid.size, 1.0)
    ctx.bind(prof)
    with pytest.raises(ConsistencyError):
        ctx.check(other)


def test_payoff_with_changes_matches_move():
    grid = TorusGrid(2, 8)
    ctx = make_context(grid, S)
    prof = StrategyProfile.random(S, grid.size, np.random.default_rng(2))
    ctx.bind(prof)
    changes = {3: 40, 11: 0, 60: 21}
    expected = ctx.payoff_with_changes(9, 21, changes)
    for v, s in changes.items():
        ctx.move(v, s)
    assert ctx.payoff(9, 21) == pytest.approx(expected, rel=1e-12)


def test_uniform_payoffs_match_bound_profile():
    grid = TorusGrid(2, 12)
    ctx = make_context(grid, S)
    row = ctx.uniform_payoffs(S.index_of(2.0))
    ctx.bind(StrategyProfile.uniform(S, grid.size, 2.0))
    np.testing.assert_allclose(row, ctx.payoffs(0), rtol=1e-12)


def test_geo_context_uniform_payoffs():
    pop = as_population(np.random.default_rng(0).uniform(0, 50, (60, 2)), distance_floor=1.0)
    ctx = make_context(pop, S, nbins=16)
    prof = StrategyProfile.uniform(S, pop.size, 1.0)
    ctx.bind(prof)
    for u in (0, 7, 59):
        np.testing.assert_allclose(ctx.uniform_payoffs(10, u), ctx.payoffs(u), rtol=1e-12)
    total = sum(link_probability(ctx, 4, v, 1.5) for v in range(pop.size) if v != 4)
    assert total == pytest.approx(1.0)


def test_routing_payoff_needs_a_grid():
    pop = as_population([(0, 0), (1, 0), (0, 1), (3, 3)])
    ctx = make_context(pop, S)
    prof = StrategyProfile.uniform(S, pop.size, 1.0)
    ctx.bind(prof)
    with pytest.raises(UnsupportedGeometryError):
        routing_payoff(ctx, 0, 1.0, prof, RoutingNeg())


def test_routing_model_validation():
    with pytest.raises(InputError):
        RoutingNeg(q=0)
    with pytest.raises(InputError):
        RoutingNeg(estimator="exact")
    assert DRB() == DRB()
