from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fitness_ifs.particles import (
    DimensionError,
    FitnessState,
    ModelParams,
    coupled_run,
    environment_word,
    pair_cdf_longrun,
    simulate,
    single_site_replicas,
    step,
    theta_step,
)
from fitness_ifs.stationary import single_site_cdf

unit = st.floats(0.0, 1.0)


def test_step_good_environment_takes_max():
    out = step(FitnessState([0.2, 0.8]), 1, [0.5, 0.5])
    np.testing.assert_array_equal(out.fitness, [0.5, 0.8])
    assert out.time == 1


def test_step_bad_environment_takes_min():
    out = step(FitnessState([0.2, 0.8]), 0, [0.5, 0.5])
    np.testing.assert_array_equal(out.fitness, [0.2, 0.5])


def test_step_max_with_zero_uniforms_is_identity():
    x = np.array([0.1, 0.7, 0.33])
    np.testing.assert_array_equal(step(FitnessState(x), 1, np.zeros(3)).fitness, x)


def test_step_rejects_length_mismatch_and_bad_bit():
    with pytest.raises(DimensionError):
        step(FitnessState([0.2, 0.8]), 1, [0.5])
    with pytest.raises(ValueError):
        step(FitnessState([0.2, 0.8]), 2, [0.5, 0.5])


def test_model_params_validation():
    for bad in ({"p": 0.0, "num_sites": 3}, {"p": 1.0, "num_sites": 3}, {"p": 0.4, "num_sites": 0}):
        with pytest.raises(ValueError):
            ModelParams(**bad)
    with pytest.raises(ValueError):
        ModelParams(0.4, 3, horizon=-1)


def test_simulate_without_steps_returns_initial_state():
    traj = simulate(ModelParams(0.4, 1, horizon=0), init=0.0)
    assert len(traj) == 1
    np.testing.assert_array_equal(traj.fitness, [[0.0]])


def test_simulate_is_deterministic_and_has_length_horizon_plus_one():
    params = ModelParams(0.4, 50, seed=11, horizon=30)
    a, b = simulate(params), simulate(params)
    assert len(a) == 31
    np.testing.assert_array_equal(a.fitness, b.fitness)
    np.testing.assert_array_equal(a.bits, b.bits)


def test_different_seeds_give_different_runs():
    a = simulate(ModelParams(0.4, 20, seed=1, horizon=5))
    b = simulate(ModelParams(0.4, 20, seed=2, horizon=5))
    assert not np.array_equal(a.fitness, b.fitness)


def test_site_streams_do_not_depend_on_number_of_sites():
    small = simulate(ModelParams(0.4, 10, seed=5, horizon=20))
    large = simulate(ModelParams(0.4, 5000, seed=5, horizon=20))
    np.testing.assert_array_equal(small.fitness, large.fitness[:, :10])


def test_environment_word_is_shared_by_simulate_and_coupled_run():
    params = ModelParams(0.3, 100, seed=9, horizon=40)
    word = environment_word(params)
    np.testing.assert_array_equal(simulate(params).bits, word)
    np.testing.assert_array_equal(coupled_run(params, [0.5]).bits, word)
    assert abs(word.mean() - 0.3) < 0.3


def test_initial_specs():
    params = ModelParams(0.4, 4, horizon=0)
    np.testing.assert_array_equal(simulate(params, init=0.25).fitness[0], [0.25] * 4)
    vec = [0.1, 0.2, 0.3, 0.4]
    np.testing.assert_array_equal(simulate(params, init=vec).fitness[0], vec)
    with pytest.raises(DimensionError):
        simulate(params, init=[0.1, 0.2])
    with pytest.raises(ValueError):
        simulate(params, init="normal")
    with pytest.raises(ValueError):
        simulate(params, init=1.5)


def test_uniforms_differ_across_sites():
    traj = simulate(ModelParams(0.5, 200, seed=3, horizon=1), init=0.0)
    # from zero the first good step copies the uniforms; a bad step keeps zeros
    row = traj.fitness[1]
    if traj.bits[0] == 1:
        assert np.unique(row).size == row.size
    else:
        assert np.all(row == 0.0)


def test_trajectory_rows_long_format():
    traj = simulate(ModelParams(0.4, 2, seed=1, horizon=1))
    rows = list(traj.rows())
    assert len(rows) == 4
    assert list(rows[0]) == ["t", "site", "fitness"]
    assert traj.final.time == 1


def test_coupled_run_recursion_matches_theta_step():
    params = ModelParams(0.4, 300, seed=4, horizon=25)
    u = np.array([0.2, 0.6])
    trace = coupled_run(params, u)
    np.testing.assert_array_equal(trace.theta[0], trace.empirical[0])
    th = trace.theta[0]
    for t, b in enumerate(trace.bits, start=1):
        th = theta_step(th, u, int(b))
        np.testing.assert_array_equal(trace.theta[t], th)
    assert trace.max_deviation == pytest.approx(np.abs(trace.empirical - trace.theta).max())
    assert trace.empirical.min() >= 0 and trace.theta.max() <= 1


def test_coupled_run_single_site_has_order_one_deviation():
    trace = coupled_run(ModelParams(0.4, 1, seed=2, horizon=50), [0.5])
    assert trace.max_deviation > 0.1


def test_coupled_run_rejects_bad_grid():
    params = ModelParams(0.4, 5, horizon=2)
    for grid in ([], [0.0, 0.5], [0.5, 0.4], [0.5, 1.0]):
        with pytest.raises(ValueError):
            coupled_run(params, grid)


def test_coupling_rows_header():
    trace = coupled_run(ModelParams(0.4, 5, horizon=2), [0.5])
    assert list(next(trace.rows())) == ["t", "u", "empirical", "theta", "deviation"]


def test_pair_cdf_needs_two_sites_and_valid_burn_in():
    with pytest.raises(ValueError):
        pair_cdf_longrun(ModelParams(0.4, 1, horizon=100), 0.3, 0.7)
    with pytest.raises(ValueError):
        pair_cdf_longrun(ModelParams(0.4, 5, horizon=10), 0.3, 0.7, burn_in=10)


def test_pair_cdf_equal_levels_is_second_moment_scale():
    est = pair_cdf_longrun(ModelParams(0.5, 40, seed=8, horizon=5000), 0.5, 0.5, batches=20)
    # at p = u = 1/2 the marginal is uniform, so P(both <= 1/2) lies in [1/4, 1/2]
    assert 0.25 - 4 * est.stderr <= est.mean <= 0.5 + 4 * est.stderr


def test_independent_replicas_match_single_site_law():
    # every replica has its own environment, so the final values are IID
    x = single_site_replicas(0.4, 10_000, 300, seed=1)
    ks = stats.kstest(x, lambda v: single_site_cdf(0.4, np.clip(v, 0, 1))).statistic
    assert ks <= 0.02


@given(
    base=st.lists(unit, min_size=1, max_size=8),
    bumps=st.lists(unit, min_size=8, max_size=8),
    seed=st.integers(0, 2**32),
)
def test_monotone_coupling(base, bumps, seed):
    lower = np.array(base)
    upper = np.minimum(lower + np.array(bumps[: lower.size]), 1.0)
    params = ModelParams(0.45, lower.size, seed=seed, horizon=15)
    a = simulate(params, init=lower).fitness
    b = simulate(params, init=upper).fitness
    assert np.all(a <= b)


@given(
    x=st.lists(unit, min_size=2, max_size=10),
    data=st.data(),
)
def test_permutation_equivariance(x, data):
    n = len(x)
    perm = np.array(data.draw(st.permutations(range(n))))
    state = FitnessState(x)
    pstate = FitnessState(np.asarray(x)[perm])
    rng = np.random.default_rng(data.draw(st.integers(0, 1000)))
    for _ in range(6):
        b = int(rng.random() < 0.5)
        v = rng.random(n)
        state = step(state, b, v)
        pstate = step(pstate, b, v[perm])
        np.testing.assert_array_equal(pstate.fitness, state.fitness[perm])


@given(p=st.floats(0.01, 0.99), seed=st.integers(0, 2**32))
def test_fitness_stays_in_unit_interval(p, seed):
    f = simulate(ModelParams(p, 7, seed=seed, horizon=10)).fitness
    assert f.min() >= 0.0 and f.max() <= 1.0
