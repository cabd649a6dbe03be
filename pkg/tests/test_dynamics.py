import numpy as np
import pytest

from drbgame import InputError, StrategyProfile, StrategySet, TorusGrid, make_context
from drbgame.dynamics import (DynamicsConfig, DynamicsState, PerturbationSpec, async_step,
                              best_response, perturb, run_until_converged, sync_step,
                              uniform_best_response, uniform_fixed_points, uniform_orbit,
                              uniform_value)

S = StrategySet(10, 10.0)


@pytest.fixture(scope="module")
def ctx20():
    return make_context(TorusGrid(2, 20), S)


def test_zero_is_a_fixed_point(ctx20):
    assert uniform_best_response(ctx20, 0.0).strategy == 0.0
    assert 0.0 in uniform_fixed_points(ctx20)


def test_uniform_map_matches_bound_profile(ctx20):
    prof = StrategyProfile.uniform(S, ctx20.size, 3.0)
    ctx20.bind(prof)
    br = best_response(ctx20, 0)
    assert br.strategy == uniform_best_response(ctx20, 3.0).strategy


def test_orbit_ends_in_repeat(ctx20):
    orbit = uniform_orbit(ctx20, 3.0)
    assert orbit[-1] in orbit[:-1]


def test_sync_dynamics_deterministic():
    grid = TorusGrid(2, 12)
    runs = []
    for _ in range(2):
        ctx = make_context(grid, S)
        prof = StrategyProfile.random(S, grid.size, np.random.default_rng(7))
        traj = run_until_converged(DynamicsState.start(ctx, prof), DynamicsConfig(max_steps=30))
        runs.append((traj.final.idx.copy(), traj.records))
    np.testing.assert_array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]


def test_converged_profile_is_stable():
    grid = TorusGrid(2, 12)
    ctx = make_context(grid, S)
    prof = StrategyProfile.random(S, grid.size, np.random.default_rng(1))
    state = DynamicsState.start(ctx, prof)
    traj = run_until_converged(state, DynamicsConfig(max_steps=50))
    assert traj.converged
    assert sync_step(state) == 0


def test_async_moves_apply_immediately():
    grid = TorusGrid(2, 10)
    ctx = make_context(grid, S)
    prof = StrategyProfile.uniform(S, grid.size, 2.0)
    prof.set(0, S.index_of(9.0))
    state = DynamicsState.start(ctx, prof)
    assert async_step(state, 0)
    assert state.profile.values[0] != 9.0
    ref = make_context(grid, S).bind(state.profile.copy())
    np.testing.assert_allclose(ctx.A, ref.A, rtol=1e-12)


def test_async_run_converges():
    grid = TorusGrid(2, 10)
    ctx = make_context(grid, S)
    prof = StrategyProfile.random(S, grid.size, np.random.default_rng(2))
    traj = run_until_converged(DynamicsState.start(ctx, prof),
                               DynamicsConfig(mode="async", seed=0, max_steps=100))
    assert traj.converged
    assert len(traj.records) == traj.steps + 1


def test_tolerance_stops_early():
    grid = TorusGrid(2, 10)
    ctx = make_context(grid, S)
    prof = StrategyProfile.random(S, grid.size, np.random.default_rng(2))
    traj = run_until_converged(DynamicsState.start(ctx, prof),
                               DynamicsConfig(max_steps=100, tolerance=grid.size))
    assert traj.converged and traj.steps == 1


def test_config_validation():
    for bad in ({"mode": "parallel"}, {"order": "sorted"}, {"max_steps": 0}, {"tolerance": -1}):
        with pytest.raises(InputError):
            DynamicsConfig(**bad)


def test_perturbation_zero_is_identity():
    prof = StrategyProfile.random(S, 400, np.random.default_rng(0))
    out, mask = perturb(prof, PerturbationSpec(0.0, seed=1))
    assert not mask.any()
    assert out == prof


def test_perturbation_respects_range_and_choices():
    prof = StrategyProfile.uniform(S, 2000, 2.0)
    out, mask = perturb(prof, PerturbationSpec(1.0, low=1.0, high=3.0, seed=2))
    assert mask.all()
    assert out.values.min() >= 1.0 and out.values.max() <= 3.0
    out, _ = perturb(prof, PerturbationSpec(0.5, choices=[0.0, 10.0], seed=3))
    assert set(np.unique(out.values)) <= {0.0, 2.0, 10.0}
    with pytest.raises(InputError):
        PerturbationSpec(1.5)
    with pytest.raises(InputError):
        PerturbationSpec(0.5, choices=[])
    with pytest.raises(InputError):
        perturb(prof, PerturbationSpec(0.5, high=11.0))


def test_uniform_value():
    assert uniform_value(StrategyProfile.uniform(S, 5, 2.1)) == pytest.approx(2.1)
    prof = StrategyProfile.uniform(S, 5, 2.1)
    prof.set(2, 0)
    assert uniform_value(prof) is None


def test_trajectory_jsonl(tmp_path):
    import json

    grid = TorusGrid(2, 8)
    ctx = make_context(grid, S)
    prof = StrategyProfile.random(S, grid.size, np.random.default_rng(4))
    traj = run_until_converged(DynamicsState.start(ctx, prof), DynamicsConfig(max_steps=20))
    path = tmp_path / "t.jsonl"
    with open(path, "w") as fh:
        traj.to_jsonl(fh, header={"seed": 4})
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert lines[0] == {"header": {"seed": 4}}
    assert [r["step"] for r in lines[1:]] == list(range(traj.steps + 1))
    assert len(lines[1]["quantiles"]) == 5
