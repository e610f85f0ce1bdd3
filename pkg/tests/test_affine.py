from __future__ import annotations

import math
from decimal import localcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fitness_ifs._util import make_rng
from fitness_ifs.affine import (
    AffineFamily,
    ChainState,
    TruncationBudgetError,
    forward_step,
    geometric_clock,
    partial_sum_paths,
    reversed_partial_sum,
    rho,
    sample_limit,
    sample_limit_geometric,
    sample_limit_precise,
    sample_random_cdf,
    truncation_bound,
    truncation_depth,
)
from fitness_ifs.multifractal import locate

EPS = np.finfo(float).eps


def forward(family, word, theta0):
    state = ChainState(theta0)
    for j in word:
        state = forward_step(state, family, j)
    return state.value


def test_fitness_preset_pairs_maps_with_probabilities():
    fam = AffineFamily.fitness(0.3, 0.4)
    np.testing.assert_array_equal(fam.probs, [0.4, 0.6])
    np.testing.assert_array_equal(fam.a, [0.0, 0.3])
    np.testing.assert_array_equal(fam.b, [0.3, 0.7])
    assert fam.K == 1


def test_forward_step_examples():
    fam = AffineFamily.fitness(0.5, 0.4)
    assert forward_step(ChainState(1.0), fam, 0).value == 0.5
    u, theta = 0.3, 0.45
    out = forward_step(ChainState(theta), AffineFamily.fitness(u, 0.4), 1)
    assert out.value == pytest.approx(theta + (1 - theta) * u, abs=2 * EPS)
    assert out.time == 1 and out.counts == (0, 1)
    assert forward_step(ChainState(0.0), AffineFamily.erdos(0.6, 0.4), 0).value == pytest.approx(0.4)


def test_forward_step_index_out_of_range():
    with pytest.raises(IndexError):
        forward_step(ChainState(0.5), AffineFamily.fitness(0.5, 0.4), 2)
    with pytest.raises(ValueError):
        ChainState(1.5)


def test_rho_examples():
    for p in (0.1, 0.4, 0.9):
        assert rho(AffineFamily.fitness(0.5, p)) == pytest.approx(0.5, abs=1e-15)
    assert rho(AffineFamily.fitness(0.3, 0.4)) == pytest.approx(0.54, abs=1e-15)


def test_family_validation():
    with pytest.raises(ValueError):
        AffineFamily.custom([0.5, 0.5], [(0.0, 1.0), (0.0, 1.0)])  # no contraction
    with pytest.raises(ValueError):
        AffineFamily.custom([0.5, 0.6], [(0.0, 0.5), (0.5, 0.5)])
    with pytest.raises(ValueError):
        AffineFamily.custom([1.0, 0.0], [(0.0, 0.5), (0.5, 0.5)])
    with pytest.raises(ValueError):
        AffineFamily.custom([0.5, 0.5], [(0.0, 0.5), (0.6, 0.5)])
    with pytest.raises(ValueError):
        AffineFamily.fitness(0.3, 1.0)
    fam = AffineFamily.custom([0.2, 0.3, 0.5], [(0.0, 0.3), (0.3, 0.4), (0.7, 0.3)])
    assert fam.K == 2
    assert 0.0 < rho(fam) < 1.0


def test_reversed_partial_sum_small_cases():
    fam = AffineFamily.fitness(0.3, 0.4)
    assert reversed_partial_sum(fam, [], 0.42) == 0.42
    assert reversed_partial_sum(fam, [1], 0.42) == pytest.approx(0.3 + 0.7 * 0.42, abs=EPS)
    with pytest.raises(IndexError):
        reversed_partial_sum(fam, [3], 0.1)


def test_reversed_partial_sum_matches_forward_iteration_on_random_word():
    fam = AffineFamily.fitness(0.3, 0.4)
    word = fam.draw_indices(np.random.default_rng(12), 12).tolist()
    theta0 = 0.77
    assert reversed_partial_sum(fam, word[::-1], theta0) == pytest.approx(forward(fam, word, theta0), abs=4 * EPS)


@given(
    u=st.floats(0.01, 0.99),
    word=st.lists(st.integers(0, 1), max_size=40),
    theta0=st.floats(0.0, 1.0),
)
def test_reversal_identity(u, word, theta0):
    fam = AffineFamily.fitness(u, 0.4)
    assert reversed_partial_sum(fam, word[::-1], theta0) == pytest.approx(forward(fam, word, theta0), abs=1e-14)


@given(
    u=st.floats(0.01, 0.99),
    word=st.lists(st.integers(0, 1), max_size=40),
    x=st.floats(0.0, 1.0),
    y=st.floats(0.0, 1.0),
)
def test_contraction(u, word, x, y):
    fam = AffineFamily.fitness(u, 0.4)
    factor = math.prod(fam.b[j] for j in word)
    gap = abs(forward(fam, word, x) - forward(fam, word, y))
    assert gap == pytest.approx(abs(x - y) * factor, abs=1e-14)
    assert gap <= abs(x - y) + 1e-15


def test_truncation_depth_is_minimal():
    for r in (0.1, 0.5, 0.54, 0.9, 0.999):
        for eps in (1e-2, 1e-6, 1e-10):
            t = truncation_depth(r, eps)
            assert truncation_bound(r, t) <= eps
            assert t == 0 or truncation_bound(r, t - 1) > eps


def test_sample_limit_with_loose_epsilon_has_depth_zero():
    fam = AffineFamily.fitness(0.3, 0.4)
    r = rho(fam)
    s = sample_limit(fam, (2 - r) / (1 - r), make_rng(1))
    assert s.truncation_depth == 0 and s.value == 0.0
    assert s.error_bound == pytest.approx((2 - r) / (1 - r))


def test_sample_limit_budget_error_reports_achieved_bound():
    fam = AffineFamily.fitness(0.3, 0.4)
    with pytest.raises(TruncationBudgetError) as info:
        sample_limit(fam, 1e-300, make_rng(1), max_depth=100)
    assert info.value.achieved_bound == pytest.approx(truncation_bound(rho(fam), 100))
    with pytest.raises(ValueError):
        sample_limit(fam, 0.0, make_rng(1))


def test_sample_limit_bound_and_rows():
    fam = AffineFamily.fitness(0.5, 0.4)
    s = sample_limit(fam, 1e-6, make_rng(2), size=5)
    assert s.error_bound == truncation_bound(0.5, s.truncation_depth) <= 1e-6
    rows = list(s.rows())
    assert len(rows) == 5
    assert list(rows[0]) == ["sample_id", "value", "truncation_depth", "error_bound"]


def test_sample_limit_uniform_when_u_equals_p():
    x = sample_limit(AffineFamily.fitness(0.4, 0.4), 1e-10, make_rng(3), size=100_000).value
    assert stats.kstest(x, "uniform").pvalue > 0.01


def test_sample_limit_mean_at_half():
    x = sample_limit(AffineFamily.fitness(0.5, 0.4), 1e-6, make_rng(4), size=100_000).value
    assert abs(x.mean() - 0.6) <= 3 * x.std(ddof=1) / math.sqrt(x.size)
    assert x.min() >= 0.0 and x.max() <= 1.0


def test_geometric_clock_increments():
    clock = geometric_clock(0.6, 50, make_rng(5), size=2000)
    inc = np.diff(clock, axis=1, prepend=0)
    assert inc.min() >= 1
    assert abs(inc.mean() - 1 / 0.6) < 0.02


def test_geometric_sampler_term_formula():
    u, p, kmax = 0.3, 0.4, 60
    fam = AffineFamily.fitness(u, p)
    s = sample_limit_geometric(fam, kmax, make_rng(6), size=50)
    clock = geometric_clock(1 - p, kmax, make_rng(6), size=50)
    k = np.arange(kmax)
    expected = (u / u) * (u**clock * ((1 - u) / u) ** k).sum(axis=1)  # (a_1 / b_0) sum b_0^T_k (b_1/b_0)^k
    np.testing.assert_allclose(s.value, expected, rtol=1e-12, atol=1e-15)


def test_geometric_sampler_with_unit_clock_steps():
    # success probability of the clock is 1 - p, so p -> 0 makes every step 1
    u, kmax = 0.3, 40
    s = sample_limit_geometric(AffineFamily.fitness(u, 1e-15), kmax, make_rng(7))
    assert s.value == pytest.approx(sum(u * (1 - u) ** k for k in range(kmax)), abs=1e-14)


def test_geometric_sampler_erdos_representation():
    u, p, kmax = 0.6, 0.4, 80
    s = sample_limit_geometric(AffineFamily.erdos(u, p), kmax, make_rng(8), size=40)
    clock = geometric_clock(1 - p, kmax, make_rng(8), size=40)
    np.testing.assert_allclose(s.value, (1 - u) / u * (u**clock).sum(axis=1), rtol=1e-12)


def test_geometric_tail_bound_covers_the_tail():
    u, p = 0.3, 0.4
    clock = geometric_clock(1 - p, 400, make_rng(9), size=1000)
    k = np.arange(400)
    terms = u ** (clock - 1 - k) * (1 - u) ** k
    for kmax in (5, 20, 60):
        tail = terms[:, kmax:].sum(axis=1)
        bound = u ** (clock[:, kmax - 1] - kmax) * (1 - u) ** kmax / u
        assert np.all(tail <= bound * (1 + 1e-12))


def test_geometric_sampler_rejects_wrong_shape():
    three = AffineFamily.custom([0.2, 0.3, 0.5], [(0.0, 0.3), (0.3, 0.4), (0.7, 0.3)])
    with pytest.raises(ValueError):
        sample_limit_geometric(three, 10, make_rng(1))
    no_zero = AffineFamily.custom([0.5, 0.5], [(0.1, 0.3), (0.5, 0.5)])
    with pytest.raises(ValueError):
        sample_limit_geometric(no_zero, 10, make_rng(1))
    with pytest.raises(ValueError):
        sample_limit_geometric(AffineFamily.fitness(0.3, 0.4), 0, make_rng(1))


def test_partial_sum_paths_share_the_word():
    fam = AffineFamily.fitness(0.3, 0.4)
    paths = partial_sum_paths(fam, [0, 1, 3, 30], 0.5, make_rng(10), 200)
    assert paths.shape == (200, 4)
    np.testing.assert_array_equal(paths[:, 0], 0.5)
    # distance between depths is bounded by the contraction of the common prefix
    assert np.all(np.abs(paths[:, 3] - paths[:, 2]) <= 0.7**3 + 1e-15)


def test_random_cdf_rows_are_nondecreasing_in_u():
    u = np.linspace(0.05, 0.95, 19)
    draws = sample_random_cdf(u, 0.4, 1e-10, make_rng(11), 2000)
    assert draws.shape == (2000, 19)
    assert np.all(np.diff(draws, axis=1) >= -1e-12)


def test_random_cdf_single_level_matches_sample_limit_law():
    a = sample_random_cdf([0.3], 0.4, 1e-10, make_rng(12), 20_000)[:, 0]
    b = sample_limit(AffineFamily.fitness(0.3, 0.4), 1e-10, make_rng(13), size=20_000).value
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_precise_sampler_word_is_the_coding():
    u, p, depth, digits = 0.3, 0.4, 60, 60
    values, words = sample_limit_precise(AffineFamily.fitness(u, p), depth, make_rng(14), digits, size=20)
    with localcontext() as ctx:
        ctx.prec = digits
        for x, w in zip(values, words):
            assert 0 <= x <= 1
            assert locate(x, u, depth).word == tuple(1 - w)


def test_erdos_stationary_mean_is_one_minus_p():
    # m = (1-p)(1-u + u m) + p u m solves to m = 1 - p for every u
    for u in (0.55, 0.7):
        x = sample_limit(AffineFamily.erdos(u, 0.4), 1e-10, make_rng(15), size=50_000).value
        assert abs(x.mean() - 0.6) <= 3 * x.std(ddof=1) / math.sqrt(x.size)
