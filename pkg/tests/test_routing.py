import numpy as np
import pytest

from drbgame import InputError, TorusGrid
from drbgame.routing import (delivery_times_from, expected_delivery_time, first_hop_delivery_times,
                             fit_log_squared, greedy_route, route_many, sample_graph,
                             sample_long_links, shell_cdf)


def test_uniform_links_pass_chi_square():
    grid = TorusGrid(2, 10)
    rng = np.random.default_rng(0)
    links = sample_long_links(grid, np.zeros(grid.size), 200, rng)
    counts = np.bincount(links[0], minlength=grid.size)
    assert counts[0] == 0
    obs = counts[1:]
    exp = obs.sum() / obs.size
    chi2 = float(((obs - exp) ** 2 / exp).sum())
    # 98 degrees of freedom: mean 98, sd 14
    assert chi2 < 98 + 5 * 14


def test_steep_exponent_stays_local():
    grid = TorusGrid(2, 20)
    links = sample_long_links(grid, np.full(grid.size, 10.0), 50, np.random.default_rng(1))
    src = np.repeat(np.arange(grid.size), 50)
    d = grid.pair_distances(src, links.ravel())
    assert np.mean(d == 1) >= 0.99


def test_shell_cdf():
    grid = TorusGrid(1, 9)
    cdf = shell_cdf(grid, 0.0)
    np.testing.assert_allclose(cdf, [0.25, 0.5, 0.75, 1.0])


def test_link_count_validation():
    grid = TorusGrid(2, 5)
    with pytest.raises(InputError):
        sample_long_links(grid, np.zeros(grid.size), 0, np.random.default_rng())
    with pytest.raises(InputError):
        sample_long_links(grid, np.zeros(3), 1, np.random.default_rng())
    with pytest.raises(InputError):
        route_many(sample_graph(grid, np.zeros(grid.size), p=0), [0], [1])


def test_greedy_hops_bounded_by_distance():
    grid = TorusGrid(2, 15)
    g = sample_graph(grid, np.full(grid.size, 2.0), q=1, seed=3)
    rng = np.random.default_rng(4)
    s = rng.integers(0, grid.size, 500)
    t = (s + rng.integers(1, grid.size, 500)) % grid.size
    hops = route_many(g, s, t)
    assert np.all(hops >= 1)
    assert np.all(hops <= grid.pair_distances(s, t))
    assert greedy_route(g, 0, grid.index((0, 1))) == 1
    with pytest.raises(InputError):
        route_many(g, [4], [4])


def test_sampled_graph_is_reproducible():
    grid = TorusGrid(2, 8)
    a = sample_graph(grid, np.full(grid.size, 1.0), q=3, seed=11)
    b = sample_graph(grid, np.full(grid.size, 1.0), q=3, seed=11)
    np.testing.assert_array_equal(a.long, b.long)


def test_exact_small_ring():
    # from node 0 on a 5-ring with uniform links: neighbours take 1 hop, the two
    # nodes at distance 2 take 1 hop with probability 1/4 and 2 otherwise
    grid = TorusGrid(1, 5)
    vals = np.zeros(grid.size)
    fh, _ = first_hop_delivery_times(grid, 0.0, 0, [0.0], q=1, graphs=5, targets=None, seed=0)
    assert fh[0] == pytest.approx(1.375, abs=1e-12)
    direct, err = delivery_times_from(grid, vals, 0, [0.0], q=1, graphs=4000, targets=None, seed=0)
    assert abs(direct[0] - 1.375) < 4 * err[0]


def test_first_hop_agrees_with_direct_estimate():
    grid = TorusGrid(2, 10)
    cand = [0.0, 2.0, 6.0]
    fh, fe = first_hop_delivery_times(grid, 2.0, 0, cand, q=2, graphs=40, targets=None, seed=1)
    dt, de = delivery_times_from(grid, np.full(grid.size, 2.0), 0, cand, q=2, graphs=80,
                                 targets=None, seed=2)
    for a, b, ea, eb in zip(fh, dt, fe, de):
        assert abs(a - b) < 0.15


def test_first_hop_rejects_missing_local_links():
    with pytest.raises(InputError):
        first_hop_delivery_times(TorusGrid(1, 7), 0.0, 0, [0.0], p=0)


def test_delivery_time_and_fit():
    grid = TorusGrid(2, 20)
    mean, err = expected_delivery_time(grid, np.full(grid.size, 2.0), q=1, pairs=300, seed=0)
    assert 1 < mean < 20 and err > 0
    ns = np.array([50, 100, 200])
    a, r2 = fit_log_squared(ns, 0.7 * np.log(ns) ** 2)
    assert a == pytest.approx(0.7)
    assert r2 == pytest.approx(1.0)
