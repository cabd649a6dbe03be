import numpy as np
import pytest

from drbgame import InputError, StrategyProfile, StrategySet
from drbgame.dynamics import DynamicsConfig
from drbgame.errors import DegenerateFitError, UndefinedCorrelationError
from drbgame.geo import (EdgeList, city_exponents, city_mixture, core_periphery_world,
                         density_correlation, empirical_exponent, geo_game, pair_counts,
                         population_within, uniform_disc, wire_cities, wire_power_law)
from drbgame.lattice import GeoPopulation, as_population
from drbgame.payoff import GeoPayoffContext


@pytest.fixture(scope="module")
def disc():
    return uniform_disc(1500, seed=0)


def test_uniform_wiring_has_flat_profile(disc):
    fit = empirical_exponent(disc, wire_power_law(disc, 0.0, mean_degree=10, seed=1))
    assert abs(fit.exponent) < 0.15


def test_inverse_distance_wiring(disc):
    fit = empirical_exponent(disc, wire_power_law(disc, 1.0, mean_degree=10, seed=2))
    assert fit.exponent == pytest.approx(1.0, abs=0.15)
    assert fit.r2 > 0.9


def test_two_cities_recovered():
    pop = city_mixture([500, 500], [(0, 0), (2000, 0)], 50, seed=2, distance_floor=5.0)
    edges = wire_cities(pop, {"c0": 0.6, "c1": 1.4}, mean_degree=4, seed=2)
    fits = city_exponents(pop, edges)
    assert fits["c0"].exponent == pytest.approx(0.6, abs=0.15)
    assert fits["c1"].exponent == pytest.approx(1.4, abs=0.15)


def test_single_city_fit_equals_global():
    pop = city_mixture([300], [(0, 0)], 40, seed=0, distance_floor=2.0)
    edges = wire_power_law(pop, 1.0, mean_degree=5, seed=0)
    city = city_exponents(pop, edges)["c0"]
    glob = empirical_exponent(pop, edges)
    assert city.exponent == pytest.approx(glob.exponent, rel=1e-12)


def test_pair_counts_reconcile(disc):
    edges = wire_power_law(disc, 0.5, mean_degree=6, seed=3)
    _, total, friends = pair_counts(disc, edges)
    assert total.sum() == disc.size * (disc.size - 1)
    assert friends.sum() == 2 * len(edges)


def test_small_cities_skipped(caplog):
    pop = city_mixture([150, 40], [(0, 0), (500, 0)], 20, seed=1, distance_floor=2.0)
    edges = wire_power_law(pop, 1.0, mean_degree=4, seed=1)
    fits = city_exponents(pop, edges)
    assert set(fits) == {"c0"}
    assert "c1" in caplog.text


def test_fit_needs_distinct_bins():
    pop = as_population([(0, 0)] * 6)
    with pytest.raises(DegenerateFitError):
        empirical_exponent(pop, EdgeList([(0, 1)]))


def test_edge_validation(tmp_path):
    pop = as_population([(0, 0), (1, 0), (0, 1)])
    with pytest.raises(InputError):
        EdgeList([(1, 1)])
    with pytest.raises(InputError):
        EdgeList([(0, 5)]).validate(pop)
    path = tmp_path / "e.csv"
    EdgeList([(0, 2), (1, 2)]).to_csv(path, pop)
    assert EdgeList.from_csv(path, pop).pairs.tolist() == [[0, 2], [1, 2]]
    path.write_text("src,dst\n0,9\n")
    with pytest.raises(InputError):
        EdgeList.from_csv(path, pop)


def test_identical_densities_undefined():
    pop = city_mixture([20, 20, 20], [(0, 0), (100, 0), (0, 100)], 1.0, seed=0)
    with pytest.raises(UndefinedCorrelationError):
        density_correlation({"c0": 1.0, "c1": 1.5, "c2": 0.5}, pop, 10.0)
    with pytest.raises(InputError):
        density_correlation({"c0": 1.0, "c1": 1.5}, pop, 10.0)


def test_density_correlation_sign():
    pop = city_mixture([100, 50, 20], [(0, 0), (100, 0), (0, 100)], 2.0, seed=0)
    assert population_within(pop, (0, 0), 20) == 100
    rho = density_correlation({"c0": 0.5, "c1": 1.0, "c2": 1.5}, pop, 20.0)
    assert rho < -0.9


def test_point_mass_plays_zero():
    pop = GeoPopulation([str(i) for i in range(30)], np.zeros((30, 2)), distance_floor=1.0,
                        cities=np.array(["a"] * 30))
    sset = StrategySet(10, 5.0)
    ctx = GeoPayoffContext(pop, sset)
    ctx.bind(StrategyProfile.random(sset, pop.size, np.random.default_rng(0)))
    rec = ctx.reciprocity_table()
    np.testing.assert_allclose(rec, np.broadcast_to(rec[:, :1], rec.shape), rtol=1e-9)
    res = geo_game(pop, sset, DynamicsConfig(mode="async", seed=0), settle_fraction=None)
    assert res.trajectory.converged
    assert np.all(res.values == 0.0)
    assert res.city_means(pop) == {"a": 0.0}


def test_disc_equilibrium_is_nearly_uniform():
    pop = uniform_disc(3000, seed=0)
    res = geo_game(pop, config=DynamicsConfig(mode="async", seed=0))
    v = res.values
    assert res.trajectory.converged
    assert v.std() / v.mean() < 0.15


def test_core_periphery_world_layout():
    pop = core_periphery_world(cities=5, core_size=100, periphery_size=20, seed=0)
    counts = {c: int(np.sum(pop.cities == c)) for c in np.unique(pop.cities)}
    assert counts == {"c0": 100, "c1": 80, "c2": 60, "c3": 40, "c4": 20}
    with pytest.raises(InputError):
        core_periphery_world(cities=2)


def test_wiring_rejects_impossible_degree():
    pop = uniform_disc(50, seed=0)
    with pytest.raises(InputError):
        wire_power_law(pop, 0.0, mean_degree=60)


def test_game_result_csv(tmp_path):
    pop = uniform_disc(80, seed=1)
    res = geo_game(pop, config=DynamicsConfig(mode="async", seed=1))
    path = tmp_path / "s.csv"
    res.write_csv(path, pop, header_lines=["seed=1"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=1" and lines[1] == "id,strategy"
    assert len(lines) == 82
