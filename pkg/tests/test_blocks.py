import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbda.blocks import BlockParams, BlockPartition, BlockVector, block_norm, block_view


def test_block_view_offsets():
    v = BlockVector(np.arange(1.0, 6.0), BlockPartition((2, 3)))
    np.testing.assert_array_equal(block_view(v, 1), [3, 4, 5])
    np.testing.assert_array_equal(block_view(v, 0), [1, 2])


def test_single_block_is_whole_vector():
    v = BlockVector(np.arange(5.0), BlockPartition((5,)))
    np.testing.assert_array_equal(block_view(v, 0), v.data)


def test_block_view_out_of_range():
    v = BlockVector.zeros(BlockPartition((2, 3)))
    with pytest.raises(IndexError):
        block_view(v, 2)
    with pytest.raises(IndexError):
        block_view(v, -1)


def test_view_writes_through():
    v = BlockVector.zeros(BlockPartition((2, 3)))
    block_view(v, 1)[:] = 7.0
    np.testing.assert_array_equal(v.data, [0, 0, 7, 7, 7])


def test_block_norm_values():
    v = BlockVector(np.array([3.0, 4.0, 0.0]), BlockPartition((2, 1)))
    assert block_norm(v, 0) == 5.0
    assert block_norm(v, 1) == 0.0


def test_bad_partitions():
    with pytest.raises(ValueError):
        BlockPartition(())
    with pytest.raises(ValueError):
        BlockPartition((2, 0))
    with pytest.raises(ValueError):
        BlockPartition.even(3, 4)
    with pytest.raises(ValueError):
        BlockVector(np.zeros(4), BlockPartition((2, 3)))


def test_even_partition_remainder_goes_last():
    p = BlockPartition.even(23, 5)
    assert p.sizes == (4, 4, 4, 4, 7)
    assert p.offsets == (0, 4, 8, 12, 16, 23)
    assert p.total == 23
    np.testing.assert_allclose(p.fractions().sum(), 1.0)
    assert np.bincount(p.block_ids()).tolist() == list(p.sizes)


def test_params_floor():
    bp = BlockParams([0.0, 2.0], [1.0, 0.0])
    assert bp.M[0] == 1e-8 and bp.D[1] == 1e-8
    assert BlockParams.from_dict(bp.to_dict()).M.tolist() == bp.M.tolist()
    with pytest.raises(ValueError):
        BlockParams([1.0, np.inf], [1.0, 1.0])
    with pytest.raises(ValueError):
        BlockParams([1.0], [1.0, 1.0])


sizes = st.lists(st.integers(1, 6), min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(sizes, st.integers(0, 2**32 - 1))
def test_norm_splits_over_blocks(sz, seed):
    part = BlockPartition(tuple(sz))
    v = BlockVector(np.random.default_rng(seed).normal(size=part.total) * 10, part)
    full = v.norm() ** 2
    parts = sum(block_norm(v, i) ** 2 for i in range(part.n_blocks))
    assert parts == pytest.approx(full, rel=1e-12, abs=1e-300)
    np.testing.assert_allclose(v.block_norms(), [block_norm(v, i) for i in range(part.n_blocks)],
                               rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(sizes, st.integers(0, 2**32 - 1))
def test_blocks_reassemble_exactly(sz, seed):
    part = BlockPartition(tuple(sz))
    v = BlockVector(np.random.default_rng(seed).normal(size=part.total), part)
    w = BlockVector.from_blocks([b.copy() for b in v.blocks()], part)
    assert np.array_equal(w.data, v.data)
    for i in range(part.n_blocks):
        assert block_view(v, i).shape == (sz[i],)
