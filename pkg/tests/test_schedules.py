import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.optimize import minimize

from sbda.blocks import BlockParams
from sbda.schedules import (
    PROB_FLOOR,
    AdaptiveConvex,
    SamplingDistribution,
    ScheduleError,
    StronglyConvexSimple,
    adaptive_gamma_convex,
    const_gamma_convex,
    joint_objective,
    joint_optimum,
    optimal_const_gamma,
    optimal_sampling,
    sample_block,
    sbda_r_adaptive_gamma,
    sbda_r_const_gamma,
    strongly_convex_aggressive,
    strongly_convex_simple,
)


def unit_params(n):
    return BlockParams(np.ones(n), np.ones(n))


def run_path(schedule, blocks):
    state = schedule.start()
    history = [state.gamma.copy()]
    for i in blocks:
        schedule.advance(state, int(i))
        history.append(state.gamma.copy())
    return state, np.array(history)


# -- stepsize formulas -----------------------------------------------------


def test_constant_convex_value():
    s = const_gamma_convex(unit_params(5), T=5, rho=1.0)
    np.testing.assert_allclose(s.start().gamma, math.sqrt(5.0), rtol=1e-14)
    assert s.start().gamma[0] == pytest.approx(2.23607, abs=1e-5)


def test_constant_convex_homogeneity():
    p = BlockParams(np.array([1.0, 2.0, 0.5]), np.array([1.0, 3.0, 2.0]))
    g1 = const_gamma_convex(p, 100).start().gamma
    g2 = const_gamma_convex(BlockParams(2 * p.M, p.D), 100).start().gamma
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-14)
    same = BlockParams(np.array([1.0, 2.0]), np.array([1.0, 4.0]))
    g = const_gamma_convex(same, 10).start().gamma
    assert g[0] == pytest.approx(g[1], rel=1e-14)


def test_constant_rules_need_horizon():
    with pytest.raises(ScheduleError):
        const_gamma_convex(unit_params(2), 0)
    with pytest.raises(ScheduleError):
        strongly_convex_aggressive(1.0, 2, None)


def test_adaptive_convex_value_and_untouched_blocks():
    s = adaptive_gamma_convex(unit_params(1))
    state = s.start()
    assert state.gamma[0] == pytest.approx(math.sqrt(10.0))
    for _ in range(4):
        s.advance(state, 0)
    assert state.t == 3
    assert state.gamma[0] == pytest.approx(6.32456, abs=1e-5)

    s3 = adaptive_gamma_convex(unit_params(3))
    state, hist = run_path(s3, [0, 1, 0, 1, 0])
    g_init = s3.start().gamma
    assert state.gamma[2] == g_init[2]


def test_strongly_convex_values():
    assert np.all(strongly_convex_simple(2.0, 3, 1.0).start().gamma == 2.0)
    agg = strongly_convex_aggressive(1.0, 2, 10, 1.0)
    assert np.all(agg.start().gamma == 14.0)
    assert [agg.alpha(t) for t in range(-1, 4)] == [0.0, 2.0, 3.0, 4.0, 5.0]
    with pytest.raises(ScheduleError):
        strongly_convex_simple(0.0, 2)
    with pytest.raises(ScheduleError):
        strongly_convex_aggressive(-1.0, 2, 10)


def test_aggressive_output_weights_are_linear():
    for n in (1, 2, 5):
        w = strongly_convex_aggressive(1.0, n, 20).output_weights(20)
        np.testing.assert_allclose(w, np.arange(1, 21) / n, rtol=1e-12)
        np.testing.assert_allclose((w / w.sum()).sum(), 1.0)


def test_unit_alpha_output_weights_uniform():
    w = const_gamma_convex(unit_params(4), 10).output_weights(10)
    np.testing.assert_allclose(w, 0.25)


def test_negative_output_weights_rejected():
    class Exploding(AdaptiveConvex):
        def alpha(self, t):
            return 10.0**t

    with pytest.raises(ScheduleError):
        Exploding(unit_params(3)).output_weights(5)


def test_sbda_r_constant_values():
    p = SamplingDistribution.uniform(2)
    bp = unit_params(2)
    s = optimal_const_gamma(bp, T=1)
    np.testing.assert_allclose(s, 0.70711, atol=1e-5)
    # generic form at the optimal p equals the closed form
    rng = np.random.default_rng(0)
    for _ in range(100):
        bp = BlockParams(rng.uniform(0.1, 5, 4), rng.uniform(0.1, 5, 4))
        T = int(rng.integers(1, 1000))
        generic = sbda_r_const_gamma(bp, T, optimal_sampling(bp)).start().gamma
        np.testing.assert_allclose(generic, optimal_const_gamma(bp, T), rtol=1e-10)
    # p = 1/n: same shape as the uniform rule, constants sqrt(1/2) vs sqrt(5)
    bp = BlockParams(np.array([1.0, 3.0]), np.array([2.0, 0.5]))
    ratio = sbda_r_const_gamma(bp, 99, p).start().gamma / const_gamma_convex(bp, 100).start().gamma
    np.testing.assert_allclose(ratio, math.sqrt(0.5 / 5.0), rtol=1e-12)


def test_sbda_r_adaptive_value():
    s = sbda_r_adaptive_gamma(unit_params(2), SamplingDistribution(np.array([0.5, 0.5])))
    state = s.start()
    s.advance(state, 0)
    assert state.gamma[0] == pytest.approx(0.70711, abs=1e-5)
    # p = 1/n reduces to the uniform rule up to sqrt(10)
    bp = BlockParams(np.array([1.0, 2.0, 3.0]), np.array([1.0, 1.0, 4.0]))
    r = sbda_r_adaptive_gamma(bp, SamplingDistribution.uniform(3)).start().gamma
    u = adaptive_gamma_convex(bp).start().gamma
    np.testing.assert_allclose(u / r, math.sqrt(10.0), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_gamma_monotone_and_l_accounting(seed, n):
    rng = np.random.default_rng(seed)
    bp = BlockParams(rng.uniform(0.1, 5, n), rng.uniform(0.1, 5, n))
    p = SamplingDistribution(rng.uniform(0.1, 1, n))
    for sched in (adaptive_gamma_convex(bp), sbda_r_adaptive_gamma(bp, p),
                  strongly_convex_aggressive(0.5, n, 50), const_gamma_convex(bp, 50)):
        blocks = rng.integers(0, n, 50)
        state, hist = run_path(sched, blocks)
        diffs = np.diff(hist, axis=0)
        assert np.all(diffs >= 0)
        for t, i in enumerate(blocks):
            others = np.delete(diffs[t], i)
            assert np.all(others == 0)
        expected = np.zeros(n)
        for t, i in enumerate(blocks):
            expected[i] += sched.alpha(t)
        np.testing.assert_allclose(state.l, expected, rtol=1e-14)


def test_decreasing_gamma_rejected():
    class Shrinking(AdaptiveConvex):
        def update_gamma(self, gamma, t, i):
            gamma[i] *= 0.5

    s = Shrinking(unit_params(2))
    with pytest.raises(ScheduleError):
        s.advance(s.start(), 0)


# -- Binomial counts under the simple scheme --------------------------------------


def test_block_counts_are_binomial():
    n, t, runs = 4, 20, 10_000
    rng = np.random.default_rng(5)
    s = StronglyConvexSimple(1.0, n)
    dist = SamplingDistribution.uniform(n)
    counts = np.empty(runs, dtype=int)
    for r in range(runs):
        state = s.start()
        for i in dist.sample(rng, t):
            s.advance(state, int(i))
        counts[r] = state.l[0]
    pmf = stats.binom.pmf(np.arange(t + 1), t, 1 / n)
    # pool the sparse tail so every expected count is at least 5
    edges = [0, 2, 3, 4, 5, 6, 7, 8, 9, t + 1]
    obs = np.array([np.sum((counts >= a) & (counts < b)) for a, b in zip(edges, edges[1:])])
    exp = np.array([pmf[a:b].sum() for a, b in zip(edges, edges[1:])]) * runs
    assert exp.min() >= 5
    _, pval = stats.chisquare(obs, exp)
    assert pval > 1e-3


def test_binomial_expectation_small_case():
    # l ~ Binomial(1, 1/2), E[1 / (l + 1)] = (1 + 1/2) / 2
    from sbda.checks import binomial_expectation_closed, binomial_expectation_exact

    assert float(binomial_expectation_exact(2, 1)) == 0.75
    assert binomial_expectation_closed(2, 1) == pytest.approx(0.75, abs=1e-15)
    assert 0.75 <= 2 / (1 * (1 + 1))


# -- sampling -------------------------------------------------------------------


def test_sampling_distribution_invariants():
    d = SamplingDistribution(np.array([1.0, 3.0, 6.0]))
    assert d.p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(d.cumulative) > 0)
    assert d.cumulative[-1] == 1.0 and not d.floored
    with pytest.raises(ValueError):
        SamplingDistribution(np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        SamplingDistribution(np.array([1.0, -1.0]))


def test_near_degenerate_distribution_is_floored():
    d = SamplingDistribution(np.array([1.0, 1e-12]))
    assert d.floored
    assert d.p[1] >= PROB_FLOOR * 0.99
    assert np.all(np.diff(d.cumulative) > 0)
    rng = np.random.default_rng(0)
    assert np.mean(d.sample(rng, 10_000) == 0) > 0.999
    assert {sample_block(SamplingDistribution(np.array([1.0])), rng) for _ in range(20)} == {0}


def test_uniform_sampling_frequencies():
    rng = np.random.default_rng(1)
    draws = SamplingDistribution.uniform(4).sample(rng, 100_000)
    freq = np.bincount(draws, minlength=4) / 100_000
    sigma = math.sqrt(0.25 * 0.75 / 100_000)
    assert np.all(np.abs(freq - 0.25) < 3 * sigma)


def test_sampling_is_deterministic_under_seed():
    d = SamplingDistribution(np.array([0.2, 0.5, 0.3]))
    a = d.sample(np.random.default_rng(42), 100)
    b = d.sample(np.random.default_rng(42), 100)
    assert np.array_equal(a, b)
    assert sample_block(d, np.random.default_rng(42)) == a[0]


def test_optimal_sampling_examples():
    np.testing.assert_allclose(optimal_sampling(unit_params(2)).p, [0.5, 0.5])
    np.testing.assert_allclose(optimal_sampling(BlockParams(np.array([8.0, 1.0]), np.ones(2))).p, [0.8, 0.2])
    bp = BlockParams(np.array([1.0, 2.0, 5.0]), np.array([3.0, 1.0, 2.0]))
    scaled = BlockParams(bp.M, 7.5 * bp.D)
    np.testing.assert_allclose(optimal_sampling(bp).p, optimal_sampling(scaled).p, rtol=1e-12)


def test_optimal_sampling_matches_grid_on_two_blocks():
    from sbda.checks import grid_minimize_simplex, sampling_bound

    bp = BlockParams(np.array([8.0, 1.0]), np.ones(2))
    p_grid, _ = grid_minimize_simplex(sampling_bound(bp.M, bp.D), 2, coarse=1e-3, fine=1e-5, width=2e-3)
    np.testing.assert_allclose(p_grid, [0.8, 0.2], atol=1e-3)


# -- joint problem ---------------------------------------------------------------


def test_joint_optimum_examples():
    x, y = joint_optimum([1.0, 1.0], [1.0, 1.0])
    np.testing.assert_allclose(y, [0.5, 0.5])
    np.testing.assert_allclose(x, math.sqrt(0.5))
    x, y = joint_optimum([8.0, 1.0], [1.0, 1.0])
    np.testing.assert_allclose(y, [2 / 3, 1 / 3])
    np.testing.assert_allclose(x, [4 / math.sqrt(3), 1 / math.sqrt(3)])
    with pytest.raises(ValueError):
        joint_optimum([1.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        joint_optimum([1.0], [1.0, 1.0])


def test_joint_optimum_beats_random_points():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(0.1, 5, 4), rng.uniform(0.1, 5, 4)
    x, y = joint_optimum(a, b)
    best = joint_objective(x, y, a, b)
    for _ in range(1000):
        xr = rng.uniform(0.01, 10, 4)
        yr = rng.dirichlet(np.ones(4))
        assert best <= joint_objective(xr, yr, a, b) + 1e-12


def test_joint_optimum_against_alternating_minimization():
    a, b = np.array([8.0, 1.0]), np.array([1.0, 1.0])
    y = np.array([0.5, 0.5])
    for _ in range(200):
        x = np.sqrt(a * b * y)
        res = minimize(lambda u: joint_objective(x, np.exp(u) / np.exp(u).sum(), a, b), np.log(y))
        y = np.exp(res.x) / np.exp(res.x).sum()
    xc, yc = joint_optimum(a, b)
    assert joint_objective(xc, yc, a, b) <= joint_objective(x, y, a, b) + 1e-3
