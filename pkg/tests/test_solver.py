import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attainment.core import ConfigError, DomainBounds, FeatureParameterPoint, denormalize
from attainment.gp import AttainmentGP, GpHyperparams
from attainment.region import AttainmentQuery, is_attainable, success_probability
from attainment.solver import FreezeMask, SolverConfig, brute_force_nearest, grid_cell_diagonal, solve

B = DomainBounds()


def small_gp():
    rng = np.random.default_rng(5)
    U = rng.uniform(size=(60, 5))
    y = (0.8 * U[:, 1] + U[:, 2] - 0.3 * U[:, 0] < 0.7).astype(float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return AttainmentGP(hyperparams=GpHyperparams((0.3, 0.3, 0.3, 3.0, 3.0), 0.5, 0.01)).fit(denormalize(U, B), y)


GP = small_gp()
Q = AttainmentQuery(GP)
KP_ONLY = FreezeMask.freezing("ice", "angle", "ki", "kd")


class TwoSided:
    """Attainable iff |kp - 1| >= 0.5."""

    bounds_ = B

    def predict(self, X):
        return (np.abs(np.atleast_2d(X)[:, 2] - 1.0) >= 0.5).astype(float)


def failing_points(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        x = denormalize(rng.uniform(size=5), B)
        if not is_attainable(Q, x):
            out.append(x)
    return out


# -- masks and configs ------------------------------------------------------------------


def test_named_masks():
    assert FreezeMask.adaptive().frozen_names() == ["ice", "angle"]
    assert FreezeMask.counterfactual().frozen_names() == ["kp", "ki", "kd"]
    assert FreezeMask.adaptive().mode == "adaptive"
    assert FreezeMask.freezing("ice").mode == "masked"
    with pytest.raises(ConfigError):
        FreezeMask((True,) * 5)
    with pytest.raises(ConfigError):
        FreezeMask((True,) * 4)


@pytest.mark.parametrize(
    "kwargs",
    [{"population": 8}, {"elite_fraction": 0}, {"elite_fraction": 1}, {"max_iterations": 0}, {"seed": -1}, {"tau_end": 1.0}],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SolverConfig(**kwargs)


def test_temperature_schedule():
    cfg = SolverConfig()
    assert cfg.temperature(0) == 0.5
    assert cfg.temperature(1) == pytest.approx(0.45)
    assert cfg.temperature(100) == 0.05


def test_cell_diagonal():
    assert grid_cell_diagonal(200, 2) == pytest.approx(math.sqrt(2) / 199)


# -- oracle -----------------------------------------------------------------------------


def test_oracle_on_half_space(half_space):
    res = brute_force_nearest(AttainmentQuery(half_space), FeatureParameterPoint.of(kp=1.3), KP_ONLY, 200)
    grid = np.linspace(0, 2, 200)
    expected = grid[grid <= 0.8].max()
    assert res.feasible
    assert res.x_star.theta.kp == expected
    assert res.distance == pytest.approx(abs(1.3 - expected) / 2, abs=1e-15)


def test_oracle_keeps_attainable_query():
    x = FeatureParameterPoint.of(kp=0.5)
    res = brute_force_nearest(AttainmentQuery(TwoSided()), x, KP_ONLY, 5)
    assert res.x_star == x and res.distance == 0.0


def test_oracle_tie_breaks_on_lowest_index():
    res = brute_force_nearest(AttainmentQuery(TwoSided()), FeatureParameterPoint.of(kp=1.0), KP_ONLY, 5)
    assert res.x_star.theta.kp == 0.5
    assert res.distance == pytest.approx(0.25)


def test_oracle_empty_region(constant_model):
    res = brute_force_nearest(AttainmentQuery(constant_model(0.0)), FeatureParameterPoint.of(kp=1.3), FreezeMask.adaptive(), 20)
    assert not res.feasible


def test_oracle_needs_two_points():
    with pytest.raises(ConfigError):
        brute_force_nearest(Q, np.zeros(5), KP_ONLY, 1)


# -- solver -----------------------------------------------------------------------------


def test_attainable_query_returned_unchanged():
    x = denormalize(np.array([0.2, 0.1, 0.1, 0.5, 0.5]), B)
    assert is_attainable(Q, x)
    res = solve(Q, x, FreezeMask.adaptive())
    assert res.feasible and res.distance == 0.0
    assert res.x_star.as_array().tobytes() == x.tobytes()


def test_half_space_adaptive(half_space):
    q = AttainmentQuery(half_space)
    x = FeatureParameterPoint.of(ice=1, angle=10, kp=1.3)
    res = solve(q, x, FreezeMask.adaptive())
    assert res.feasible
    assert res.x_star.theta.kp <= 0.8
    assert res.distance == pytest.approx(0.25, abs=2e-3)
    assert res.summary() == "adaptive solution: kp 1.30 -> 0.80, predicted 1.00"


def test_empty_region_is_infeasible(constant_model):
    res = solve(AttainmentQuery(constant_model(0.3)), FeatureParameterPoint.of(kp=1.3), FreezeMask.adaptive())
    assert not res.feasible
    assert res.x_star == FeatureParameterPoint.of(kp=1.3)
    assert res.predicted == 0.3
    assert "none found" in res.summary()


masks = st.lists(st.booleans(), min_size=5, max_size=5).filter(lambda f: not all(f)).map(lambda f: FreezeMask(tuple(f)))
queries = st.lists(st.floats(0, 1), min_size=5, max_size=5).map(lambda u: denormalize(np.array(u), B))


@settings(max_examples=30, deadline=None)
@given(queries, masks, st.integers(0, 1000))
def test_frozen_dims_bitwise_and_feasibility_sound(x, mask, seed):
    res = solve(Q, x, mask, SolverConfig(population=64, max_iterations=10, seed=seed))
    x_star = res.x_star.as_array()
    for d in np.flatnonzero(~mask.free):
        assert x_star[d].tobytes() == x[d].tobytes()
    if res.feasible:
        assert is_attainable(Q, res.x_star)
        assert res.predicted == success_probability(Q, res.x_star)


def test_deterministic_for_fixed_seed():
    x = failing_points(1, 0)[0]
    a = solve(Q, x, FreezeMask.counterfactual(), SolverConfig(seed=3))
    b = solve(Q, x, FreezeMask.counterfactual(), SolverConfig(seed=3))
    assert a == b
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_more_iterations_never_worse(seed, short):
    x = failing_points(1, seed)[0]
    mask = FreezeMask.freezing("ki", "kd")
    a = solve(Q, x, mask, SolverConfig(population=64, max_iterations=short, seed=seed, patience=100))
    b = solve(Q, x, mask, SolverConfig(population=64, max_iterations=short + 10, seed=seed, patience=100))
    if a.feasible:
        assert b.feasible and b.distance <= a.distance


@pytest.mark.parametrize("frozen", [("ice", "ki", "kd"), ("ice", "angle", "ki"), ("kp", "ki", "kd")])
def test_within_two_cells_of_oracle(frozen):
    mask = FreezeMask.freezing(*frozen)
    tol = 2 * grid_cell_diagonal(200, int(mask.free.sum()))
    for seed, x in enumerate(failing_points(20, 42)):
        res = solve(Q, x, mask, SolverConfig(seed=seed))
        ref = brute_force_nearest(Q, x, mask, 200)
        if ref.feasible:
            assert res.feasible and res.distance <= ref.distance + tol


def test_solution_json(tmp_path, half_space):
    res = solve(AttainmentQuery(half_space), FeatureParameterPoint.of(ice=1, angle=10, kp=1.3), FreezeMask.adaptive())
    res.save(tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["mode"] == "adaptive" and doc["frozen"] == ["ice", "angle"]
    assert doc["query"] == [1.0, 10.0, 1.3, 0.0, 0.0]
    assert doc["x_star"][:2] == [1.0, 10.0]
    assert set(doc) >= {"x_star", "distance", "predicted", "feasible", "iterations", "seed"}
