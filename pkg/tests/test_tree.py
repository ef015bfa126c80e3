import pytest
from hypothesis import given, strategies as st

from bmckde.tree import (MAX_DEPTH, CapacityError, child0, child1, generation, generation_nodes, generation_size,
                         is_ancestor, mrca, parent, tree_size)

nodes = st.integers(min_value=1, max_value=2**62)


@pytest.mark.parametrize("n, size", [(0, 1), (5, 32), (20, 1048576)])
def test_generation_size(n, size):
    assert generation_size(n) == size


@pytest.mark.parametrize("n, size", [(0, 1), (5, 63), (10, 2047)])
def test_tree_size(n, size):
    assert tree_size(n) == size


def test_tree_size_is_sum_of_generations():
    assert tree_size(10) == sum(generation_size(k) for k in range(11))


def test_capacity():
    assert tree_size(MAX_DEPTH) == 2**64 - 1
    with pytest.raises(CapacityError):
        generation_size(MAX_DEPTH + 1)
    with pytest.raises(CapacityError):
        tree_size(64)
    with pytest.raises(ValueError):
        tree_size(-1)


@pytest.mark.parametrize("i, j, a", [(1, 7, 1), (4, 5, 2), (12, 13, 6)])
def test_mrca_examples(i, j, a):
    assert mrca(i, j) == a


def _ancestors(u):
    out = {u}
    while u > 1:
        u //= 2
        out.add(u)
    return out


@given(nodes, nodes)
def test_mrca_matches_ancestor_sets(i, j):
    assert mrca(i, j) == max(_ancestors(i) & _ancestors(j))
    assert mrca(i, j) == mrca(j, i)
    assert mrca(i, i) == i


@given(nodes)
def test_parent_child_roundtrip(u):
    assert parent(child0(u)) == parent(child1(u)) == u
    n = generation(child0(u))
    assert 2**n <= child0(u) < 2 ** (n + 1)
    assert generation(parent(child1(u))) == n - 1
    assert is_ancestor(u, child1(u)) and not is_ancestor(child1(u), u)


def test_generation_of_root():
    assert generation(1) == 0
    with pytest.raises(ValueError):
        parent(1)


def test_iterating_children_enumerates_generation():
    gen = [1]
    for n in range(1, 11):
        gen = [c for u in gen for c in (child0(u), child1(u))]
        assert len(set(gen)) == generation_size(n)
        assert sorted(gen) == list(generation_nodes(n))
