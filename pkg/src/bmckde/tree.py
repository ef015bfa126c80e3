"""Heap-indexed addressing for the complete binary tree.

The root has index 1 and the children of ``u`` are ``2u`` and ``2u + 1``, so
generation ``n`` occupies the contiguous block ``[2**n, 2**(n+1) - 1]``.
"""

MAX_DEPTH = 63  # tree_size(63) == 2**64 - 1, the largest unsigned 64-bit count


class CapacityError(OverflowError):
    """Raised when a depth would overflow an unsigned 64-bit node count."""


def _check_depth(n):
    if n < 0:
        raise ValueError(f"depth must be non-negative, got {n}")
    if n > MAX_DEPTH:
        raise CapacityError(f"depth {n} exceeds the 64-bit capacity cap ({MAX_DEPTH})")


def generation_size(n):
    """Number of nodes in generation ``n``."""
    _check_depth(n)
    return 1 << n


def tree_size(n):
    """Number of nodes in the subtree made of generations ``0..n``."""
    _check_depth(n)
    return (1 << (n + 1)) - 1


def generation(u):
    if u < 1:
        raise ValueError(f"node ids start at 1, got {u}")
    return u.bit_length() - 1


def parent(u):
    if u <= 1:
        raise ValueError("the root has no parent")
    return u >> 1


def child0(u):
    return u << 1


def child1(u):
    return (u << 1) | 1


def generation_nodes(n):
    """Node ids of generation ``n`` as a range."""
    return range(generation_size(n), generation_size(n) << 1)


def is_ancestor(u, v):
    """True when ``u`` lies on the path from the root to ``v`` (``u`` included)."""
    shift = generation(v) - generation(u)
    return shift >= 0 and (v >> shift) == u


def mrca(i, j):
    """Most recent common ancestor of two nodes."""
    if i < 1 or j < 1:
        raise ValueError("node ids start at 1")
    gi, gj = generation(i), generation(j)
    if gi > gj:
        i >>= gi - gj
    else:
        j >>= gj - gi
    while i != j:
        i >>= 1
        j >>= 1
    return i
