import numpy as np
import pytest

from sbda.blocks import BlockPartition
from sbda.geometry import Regularizer
from sbda.oracles import (
    L1Regression,
    QueryMeter,
    default_probes,
    estimate_params,
    gen_l1_regression,
    gen_online_lasso,
    gen_transformed_ls,
    load_instance,
    parse_scaling,
    reference_optimum,
    save_instance,
)
from sbda.schedules import SamplingDistribution


def mc_block_means(oracle, x, draws, seed):
    rng = np.random.default_rng(seed)
    xis = oracle.sample(rng, draws)
    G = np.stack([oracle.subgradient(x, xi) for xi in xis])
    return G.mean(axis=0), G.std(axis=0, ddof=1) / np.sqrt(draws)


SMALL = {
    "l1reg": lambda: gen_l1_regression(200, 12, n_blocks=3, seed=4),
    "ls": lambda: gen_transformed_ls(n_features=12, m=300, n_blocks=3, rescale=0.1, seed=4, m_test=50),
    "lasso": lambda: gen_online_lasso(n_features=8, m=300, seed=4,
                                      feature_sampler=SamplingDistribution(np.arange(1.0, 9.0))),
}


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_stochastic_subgradient_unbiased(kind):
    oracle = SMALL[kind]()
    rng = np.random.default_rng(0)
    for k in range(2):
        x = rng.normal(size=oracle.dim)
        mean, se = mc_block_means(oracle, x, 100_000, seed=k)
        ref = oracle.subgradient(x)
        assert np.all(np.abs(mean - ref) <= 4 * se + 1e-12)


def test_block_queries_are_slices_of_full():
    for make in SMALL.values():
        oracle = make()
        x = np.random.default_rng(1).normal(size=oracle.dim)
        xi = oracle.sample(np.random.default_rng(2))
        g = oracle.subgradient(x, xi)
        for i in range(oracle.partition.n_blocks):
            np.testing.assert_array_equal(oracle.block_subgradient(x, i, xi), g[oracle.partition.slice(i)])
            np.testing.assert_allclose(oracle.block_subgradient(x, i), oracle.subgradient(x)[oracle.partition.slice(i)])


def test_sq_norms_match_loop():
    for make in SMALL.values():
        oracle = make()
        x = np.random.default_rng(1).normal(size=oracle.dim)
        xis = oracle.sample(np.random.default_rng(3), 50)
        fast = oracle.sample_block_sq_norms(x, xis)
        offs = np.asarray(oracle.partition.offsets[:-1])
        slow = np.stack([np.add.reduceat(oracle.subgradient(x, xi) ** 2, offs) for xi in xis])
        np.testing.assert_allclose(fast, slow, rtol=1e-12)


def test_l1reg_noiseless_zero_at_planted():
    orc = gen_l1_regression(50, 10, noise=0.0, seed=3, n_blocks=2)
    assert orc.objective(orc.x_star) == 0.0


def test_l1reg_planted_point_is_near_minimizer():
    orc = gen_l1_regression(500, 200, noise=0.01, seed=11, n_blocks=10)
    base = orc.objective(orc.x_star)
    rng = np.random.default_rng(0)
    for _ in range(20):
        e = rng.normal(size=200)
        e /= np.linalg.norm(e)
        assert base <= orc.objective(orc.x_star + e)


def test_l1reg_scaling_and_heavy_blocks():
    orc = gen_l1_regression(300, 100, scaling="powerlaw:30", n_blocks=20, heavy_blocks=1, seed=2)
    bp = estimate_params(orc, default_probes(orc, 3), 2000)
    assert bp.M.max() / bp.M.min() >= 10
    heavy = orc.meta["heavy_blocks"]
    assert heavy == 1 and np.sum(bp.M > 1.0) == 1
    # coarse blocks average the scales out; one coordinate per block keeps the spread
    orc = gen_l1_regression(300, 100, scaling="powerlaw:30", n_blocks=100, seed=2)
    bp = estimate_params(orc, default_probes(orc, 3), 2000)
    assert bp.M.max() / bp.M.min() >= 10


def test_uniform_scaling_gives_equal_block_bounds():
    orc = gen_l1_regression(2000, 200, n_blocks=10, seed=3)
    bp = estimate_params(orc, default_probes(orc, 3), 10_000)
    assert (bp.M.max() - bp.M.min()) / bp.M.mean() < 0.2


def test_ls_equal_blocks_at_unit_rescale():
    orc = gen_transformed_ls(rescale=1.0, m=3000, seed=1, m_test=10)
    xis = orc.sample(np.random.default_rng(0), 10_000)
    M = np.sqrt(orc.sample_block_sq_norms(np.zeros(orc.dim), xis).mean(axis=0))
    assert (M.max() - M.min()) / M.mean() < 0.2


def test_ls_generator_shape():
    orc = gen_transformed_ls(seed=2, m_test=10000)
    assert orc.dim == 200 and orc.Z.shape == (3000, 200) and orc.Z_test.shape == (10000, 200)
    assert np.all(np.abs(orc.x_star) <= 1.0)
    with pytest.raises(ValueError):
        gen_transformed_ls(rescaled_fraction=1.0)
    with pytest.raises(ValueError):
        gen_transformed_ls(rescale=0.0)


def test_lasso_zero_weights_estimate():
    orc = gen_online_lasso(n_features=6, m=40, seed=0)
    for row in range(5):
        for j in range(6):
            for i in range(6):
                g = orc.block_subgradient(np.zeros(6), i, (row, j))
                np.testing.assert_allclose(g, -orc.y[row] * orc.X[row, i:i + 1])


def test_lasso_single_coordinate_unbiased():
    orc = gen_online_lasso(n_features=5, m=30, seed=1)
    w = np.random.default_rng(0).normal(size=5)
    row = 7
    # average over j only, row fixed
    est = [orc.block_subgradient(w, 2, (row, j)) for j in np.random.default_rng(1).integers(0, 5, 100_000)]
    est = np.array(est).ravel()
    target = orc.X[row, 2] * (orc.X[row] @ w) - orc.y[row] * orc.X[row, 2]
    assert abs(est.mean() - target) <= 3 * est.std(ddof=1) / np.sqrt(est.size)


def test_lasso_rejects_zero_probability():
    with pytest.raises(ValueError):
        gen_online_lasso(n_features=3, feature_sampler=np.array([1.0, 0.0, 1.0]))


def test_estimate_params_exact_for_linear_loss():
    # one row, b huge: sign never flips, so G is the constant -sign * a
    A = np.array([[3.0, 4.0, 1.0]])
    orc = L1Regression(BlockPartition((2, 1)), Regularizer.zero(), None, {}, A=A, b=np.array([1e6]))
    bp = estimate_params(orc, [np.zeros(3), np.ones(3)], 5, radius_guess=2.0)
    np.testing.assert_allclose(bp.M, [5.0, 1.0])
    np.testing.assert_allclose(bp.D, [2.0, 2.0])


def test_estimate_params_exact_distance_and_errors():
    orc = gen_l1_regression(50, 10, n_blocks=2, seed=0)
    bp = estimate_params(orc, [np.zeros(10)], 10, x_star=orc.x_star)
    np.testing.assert_allclose(bp.D, [0.5 * np.sum(orc.x_star[:5] ** 2), 0.5 * np.sum(orc.x_star[5:] ** 2)])
    with pytest.raises(ValueError):
        estimate_params(orc, [], 10)
    with pytest.raises(ValueError):
        estimate_params(orc, [np.zeros(10)], 0)


def test_moment_bound_holds_on_held_out_draws():
    orc = gen_transformed_ls(n_features=20, m=500, n_blocks=4, seed=3, m_test=10)
    probes = default_probes(orc, 4)
    bp = estimate_params(orc, probes, 20_000, rng=0)
    rng = np.random.default_rng(99)
    for x in probes:
        held = orc.sample_block_sq_norms(x, orc.sample(rng, 20_000)).mean(axis=0)
        assert np.all(held <= 1.05 * bp.M**2)


def test_generators_deterministic():
    for make in SMALL.values():
        a, b = make(), make()
        for (ka, va), (kb, vb) in zip(sorted(a.arrays().items()), sorted(b.arrays().items())):
            assert ka == kb and np.array_equal(va, vb)
        s1 = a.sample(np.random.default_rng(5), 20)
        s2 = b.sample(np.random.default_rng(5), 20)
        assert np.array_equal(s1, s2)


def test_bad_dimensions():
    with pytest.raises(ValueError):
        gen_l1_regression(0, 10)
    with pytest.raises(ValueError):
        gen_l1_regression(10, 10, noise=-1)
    with pytest.raises(ValueError):
        gen_l1_regression(10, 10, n_blocks=5, heavy_blocks=6)
    with pytest.raises(ValueError):
        parse_scaling("powerlaw:-1")
    with pytest.raises(ValueError):
        parse_scaling("zipf")
    assert parse_scaling(("powerlaw", 5)) == ("powerlaw", 5.0)


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_instance_roundtrip(tmp_path, kind):
    orc = SMALL[kind]()
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_instance(orc, p1)
    save_instance(SMALL[kind](), p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = load_instance(p1)
    assert type(back) is type(orc) and back.partition == orc.partition
    assert back.regularizer == orc.regularizer and back.meta == orc.meta
    for k, v in orc.arrays().items():
        assert np.array_equal(back.arrays()[k], v)
    assert np.array_equal(back.x_star, orc.x_star)
    save_instance(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_foreign_files(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"hello\nworld")
    with pytest.raises(ValueError):
        load_instance(p)
    p.write_bytes(b"SBDA-INSTANCE 99\n{}\n")
    with pytest.raises(ValueError):
        load_instance(p)


def test_reference_l1reg_lp_optimality():
    orc = gen_l1_regression(80, 6, seed=3, n_blocks=2)
    x, val = reference_optimum(orc)
    rng = np.random.default_rng(0)
    for _ in range(200):
        assert val <= orc.objective(x + 0.01 * rng.normal(size=6)) + 1e-12
    assert val <= orc.objective(orc.x_star) + 1e-12


@pytest.mark.parametrize("reg", [Regularizer.l1(0.05), Regularizer.box(-0.5, 0.5)])
def test_reference_l1reg_with_simple_terms(reg):
    orc = gen_l1_regression(80, 6, seed=3, n_blocks=2).with_regularizer(reg)
    x, val = reference_optimum(orc)
    assert np.isfinite(val)
    rng = np.random.default_rng(1)
    for _ in range(200):
        y = x + 0.01 * rng.normal(size=6)
        if reg.kind == "box":
            y = np.clip(y, -0.5, 0.5)
        assert val <= orc.objective(y) + 1e-10


def test_reference_l1reg_ridge_kkt():
    # optimality: lam x = A^T u / m with u_k = sign(r_k) off the zero residuals, |u_k| <= 1 on them
    lam = 0.1
    orc = gen_l1_regression(100, 20, seed=5, n_blocks=4).with_regularizer(Regularizer.sql2(lam))
    x, _ = reference_optimum(orc)
    A, b, m = orc.A, orc.b, 100
    r = b - A @ x
    zero = np.abs(r) < 1e-6
    u = np.sign(r)
    need = lam * m * x - A[~zero].T @ u[~zero]
    u_zero, *_ = np.linalg.lstsq(A[zero].T, need, rcond=None)
    assert np.all(np.abs(u_zero) <= 1 + 1e-5)
    np.testing.assert_allclose(A[zero].T @ u_zero, need, atol=1e-5)


def test_reference_lasso_kkt():
    orc = gen_online_lasso(lam=0.1, seed=0, m=400)
    x, _ = reference_optimum(orc)
    grad = orc.subgradient(x)
    on = x != 0
    np.testing.assert_allclose(grad[on], -0.1 * np.sign(x[on]), atol=1e-6)
    assert np.all(np.abs(grad[~on]) <= 0.1 + 1e-6)


def test_reference_ls_normal_equations():
    orc = gen_transformed_ls(n_features=10, m=200, n_blocks=2, seed=0, m_test=10)
    x, _ = reference_optimum(orc)
    np.testing.assert_allclose(orc.subgradient(x), 0.0, atol=1e-9)


def test_query_meter_cost():
    orc = gen_l1_regression(100, 10, n_blocks=5, seed=0)
    meter = QueryMeter(orc)
    x = np.zeros(10)
    for t in range(100):
        meter.block_subgradient(x, t % 5, t)
    assert meter.block_queries == 100 and meter.full_queries == 0
    assert meter.passes == pytest.approx(100 * 0.2 / 100)
    meter.subgradient(x, 3)
    meter.subgradient(x)
    assert meter.full_queries == 2 and meter.queries == 102
    assert meter.passes == pytest.approx(0.2 + 1 / 100 + 1.0)
