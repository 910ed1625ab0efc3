"""Brute-force oracles shared by codec tests and the acceptance suite."""

import itertools


def enumerate_plane_trees(n):
    """All children-count sequences (lex DFS order) of plane trees with n vertices."""
    if n == 1:
        return [(0,)]
    out = []
    for k in range(1, n):
        # root with k subtrees splitting the remaining n-1 vertices
        for sizes in _compositions(n - 1, k):
            for combo in itertools.product(*(enumerate_plane_trees(s) for s in sizes)):
                seq = (k,) + tuple(c for sub in combo for c in sub)
                out.append(seq)
    return out


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def tree_weight(seq, dist):
    w = 1.0
    for c in seq:
        w *= dist.prob(c)
    return w
