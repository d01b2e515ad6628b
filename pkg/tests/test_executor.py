import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockipm.executor import (
    ExecMode,
    Executor,
    aligned_nodes,
    all_reduce_sum,
    merge_nodes,
    partition,
    reduce_blocks,
    tree_sum_range,
)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.data())
def test_partition_is_balanced_and_contiguous(N, data):
    G = data.draw(st.integers(1, N))
    p = partition(N, G)
    sizes = p.sizes()
    assert sum(sizes) == N and max(sizes) - min(sizes) <= 1
    assert sizes == sorted(sizes, reverse=True)
    assert p.ranges[0][0] == 0 and p.ranges[-1][1] == N
    assert all(a[1] == b[0] for a, b in zip(p.ranges, p.ranges[1:]))
    assert p.group_of(N - 1) == G - 1


def test_partition_rejects_bad_counts():
    for N, G in [(0, 1), (4, 0), (4, 5)]:
        with pytest.raises(ValueError):
            partition(N, G)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100), st.integers(1, 100))
def test_aligned_nodes_cover_exactly(lo, length):
    hi = lo + length
    nodes = aligned_nodes(lo, hi)
    assert nodes[0][0] == lo and nodes[-1][1] == hi
    for a, b in nodes:
        size = b - a
        assert size & (size - 1) == 0 and a % size == 0


def _values(N, seed=0):
    rng = np.random.default_rng(seed)
    # wide dynamic range makes summation order visible in the last bits
    return list(rng.standard_normal((N, 3)) * 10.0 ** rng.integers(-8, 8, (N, 1)))


@pytest.mark.parametrize("N", [1, 7, 16, 37])
def test_tree_reduction_invariant_across_groupings(N):
    vals = _values(N)
    ref = reduce_blocks(vals)
    for G in sorted({min(N, g) for g in (1, 2, 3, 5)} | {N}):
        for order in itertools.islice(itertools.permutations(range(G)), 6):
            ex = Executor(N, G, workers=1, completion_order=list(order))
            got = ex.all_reduce_sum(lambda lo, hi: vals[lo:hi])
            assert np.array_equal(got, ref)
            parts = [vals[lo:hi] for lo, hi in ex.partition.ranges]
            assert np.array_equal(all_reduce_sum(parts, partition=ex.partition), ref)


def test_threaded_executor_matches_inline():
    vals = _values(64, seed=3)
    with Executor(64, 8, workers=4) as ex:
        got = ex.all_reduce_sum(lambda lo, hi: vals[lo:hi])
        mapped = ex.map_blocks(lambda lo, hi: (lo, hi))
    assert np.array_equal(got, reduce_blocks(vals))
    assert mapped == list(partition(64, 8).ranges)


def test_fast_mode_close_but_order_dependent():
    vals = _values(16, seed=5)
    exact = np.sum(np.array(vals), axis=0)
    ex = Executor(16, 4, workers=1, mode=ExecMode.FAST)
    got = ex.all_reduce_sum(lambda lo, hi: vals[lo:hi])
    np.testing.assert_allclose(got, exact, rtol=1e-10, atol=1e-6)
    np.testing.assert_allclose(reduce_blocks(vals, ExecMode.FAST), exact, rtol=1e-10, atol=1e-6)


def test_merge_nodes_independent_of_dict_order():
    vals = _values(11, seed=7)
    a = tree_sum_range(vals[:5], 0, 5)
    a.update(tree_sum_range(vals[5:], 5, 11))
    b = dict(reversed(list(a.items())))
    assert np.array_equal(merge_nodes(a), merge_nodes(b))


def test_workers_validation():
    with pytest.raises(ValueError):
        Executor(4, 2, workers=0)
