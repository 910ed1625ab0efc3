"""Plane trees, their integer-walk codec, and Galton-Watson samplers.

A rooted ordered tree with vertices u_0, u_1, ... in lexicographic
(depth-first) order is encoded by the walk with one step per vertex equal to
(number of children - 1).  The walk stays nonnegative until it ends at -1;
conversely any such excursion decodes to exactly one tree.  Conditioned
critical trees are sampled by the cycle-lemma rotation of an offspring
sequence conditioned on its sum, which is exact: geometric offspring yields
the uniform law on plane trees of the target size.

Spine forests are the two infinite-forest models used for translation
stationarity: a semi-infinite ray whose vertices receive extra subtrees with
tail-distributed counts.  They are sampled lazily, streaming the forest walk
until the requested exploration length is reached.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd

import numpy as np
from numba import njit

from .errors import (
    AdmissibilityError,
    CodecError,
    SamplingBudgetError,
)

GEOMETRIC_HALF = "geometric_half"
BINARY = "binary"
POISSON_ONE = "poisson_one"

_PMF_TOL = 1e-12


@dataclass
class OffspringDistribution:
    """Critical offspring law: mean exactly 1, finite positive variance."""

    pmf: dict
    mean: float
    sigma_p_sq: float
    support_gcd: int
    preset_name: str = "custom"

    @classmethod
    def from_pmf(cls, pmf: dict, preset_name: str = "custom") -> "OffspringDistribution":
        items = sorted((int(i), float(p)) for i, p in pmf.items() if p > 0.0)
        vals = np.array([i for i, _ in items])
        probs = np.array([p for _, p in items])
        total = probs.sum()
        if abs(total - 1.0) > _PMF_TOL:
            raise ValueError(f"offspring probabilities sum to {total}, not 1")
        mean = float(vals @ probs)
        if abs(mean - 1.0) > _PMF_TOL:
            raise ValueError(f"offspring mean is {mean}, distribution is not critical")
        var = float((vals.astype(float) ** 2) @ probs) - 1.0
        if not (0.0 < var < np.inf):
            raise ValueError("offspring variance must be positive and finite")
        g = 0
        for i in vals:
            if i > 0:
                g = gcd(g, int(i))
        if g == 0:
            raise ValueError("offspring support must contain a positive value")
        return cls(
            pmf=dict(items),
            mean=mean,
            sigma_p_sq=var,
            support_gcd=g,
            preset_name=preset_name,
        )

    @classmethod
    def geometric_half(cls) -> "OffspringDistribution":
        """p_i = 2^-(i-1)-ish: P(i) = 2^-(i+1); conditioned trees are uniform."""
        pmf = {i: 2.0 ** -(i + 1) for i in range(0, 64)}
        dist = cls(
            pmf=pmf,
            mean=1.0,
            sigma_p_sq=2.0,
            support_gcd=1,
            preset_name=GEOMETRIC_HALF,
        )
        return dist

    @classmethod
    def binary(cls) -> "OffspringDistribution":
        return cls(
            pmf={0: 0.5, 2: 0.5},
            mean=1.0,
            sigma_p_sq=1.0,
            support_gcd=2,
            preset_name=BINARY,
        )

    @classmethod
    def poisson_one(cls, truncation: int = 64) -> "OffspringDistribution":
        """Poisson(1) cut at ``truncation`` and renormalized.

        The removed tail mass is ~1/65! so the criticality bias is far below
        1e-12 and no explicit re-centering is required.
        """
        from scipy import special

        ks = np.arange(truncation + 1)
        probs = np.exp(-1.0) / special.factorial(ks)
        probs = probs / probs.sum()
        return cls(
            pmf={int(k): float(p) for k, p in zip(ks, probs)},
            mean=float(ks @ probs),
            sigma_p_sq=float((ks.astype(float) ** 2) @ probs) - 1.0,
            support_gcd=1,
            preset_name=POISSON_ONE,
        )

    def prob(self, i: int) -> float:
        if self.preset_name == GEOMETRIC_HALF:
            return 2.0 ** -(i + 1) if i >= 0 else 0.0
        return self.pmf.get(i, 0.0)

    def tail_prob(self, j: int) -> float:
        """P(extra spine offspring = j) = sum_{i > j} p_i."""
        if self.preset_name == GEOMETRIC_HALF:
            return 2.0 ** -(j + 1) if j >= 0 else 0.0
        return sum(p for i, p in self.pmf.items() if i > j)

    def sample_counts(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. offspring counts."""
        if self.preset_name == GEOMETRIC_HALF:
            return rng.geometric(0.5, size=n) - 1
        if self.preset_name == BINARY:
            return 2 * rng.integers(0, 2, size=n)
        if self.preset_name == POISSON_ONE:
            out = rng.poisson(1.0, size=n)
            trunc = max(self.pmf)
            bad = out > trunc
            while bad.any():
                out[bad] = rng.poisson(1.0, size=int(bad.sum()))
                bad = out > trunc
            return out
        vals = np.fromiter(self.pmf.keys(), dtype=np.int64)
        probs = np.fromiter(self.pmf.values(), dtype=float)
        return rng.choice(vals, size=n, p=probs / probs.sum())

    def sample_tail_counts(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. draws of the spine extra-offspring (tail) law."""
        if self.preset_name == GEOMETRIC_HALF:
            # tail of geometric(1/2) is geometric(1/2) again
            return rng.geometric(0.5, size=n) - 1
        support = sorted(self.pmf)
        js = np.arange(0, max(support))
        probs = np.array([self.tail_prob(int(j)) for j in js])
        return rng.choice(js, size=n, p=probs / probs.sum())

    def admissible(self, n: int) -> bool:
        return n >= 1 and (n - 1) % self.support_gcd == 0


PRESETS = {
    GEOMETRIC_HALF: OffspringDistribution.geometric_half,
    BINARY: OffspringDistribution.binary,
    POISSON_ONE: OffspringDistribution.poisson_one,
}


def offspring_preset(name: str) -> OffspringDistribution:
    if name not in PRESETS:
        raise ValueError(f"unknown offspring preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


@dataclass
class LukasiewiczPath:
    steps: np.ndarray

    @property
    def length(self) -> int:
        return len(self.steps)

    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.steps)


@dataclass
class PlaneTree:
    """Rooted ordered tree stored in lexicographic (depth-first) vertex order."""

    parent: np.ndarray
    children_counts: np.ndarray
    depth: np.ndarray

    @property
    def size(self) -> int:
        return len(self.parent)

    def __eq__(self, other) -> bool:
        return isinstance(other, PlaneTree) and np.array_equal(
            self.children_counts, other.children_counts
        )


@njit(cache=True)
def _decode_loop(counts, parent, depth):
    n = counts.shape[0]
    stack = np.empty(n + 1, dtype=np.int64)
    remaining = np.empty(n, dtype=np.int64)
    top = 0
    stack[0] = 0
    remaining[0] = counts[0]
    for k in range(1, n):
        while top >= 0 and remaining[stack[top]] == 0:
            top -= 1
        if top < 0:
            return -1  # ran out of open vertices: malformed
        p = stack[top]
        parent[k] = p
        depth[k] = depth[p] + 1
        remaining[p] -= 1
        remaining[k] = counts[k]
        top += 1
        stack[top] = k
    for k in range(n):
        if remaining[k] != 0:
            return -2  # unattached children remain: malformed
    return 0


def encode(tree: PlaneTree) -> LukasiewiczPath:
    """Walk steps (children count - 1) per vertex in lexicographic order."""
    return LukasiewiczPath(steps=tree.children_counts.astype(np.int64) - 1)


def decode(path: LukasiewiczPath) -> PlaneTree:
    """Inverse of encode; raises CodecError on a malformed excursion."""
    steps = np.asarray(path.steps, dtype=np.int64)
    n = len(steps)
    if n == 0:
        raise CodecError("empty path")
    if steps.min() < -1:
        raise CodecError("steps below -1 are not a tree encoding")
    sums = np.cumsum(steps)
    if sums[-1] != -1:
        raise CodecError(f"path ends at {sums[-1]}, not -1")
    if n > 1 and sums[:-1].min() < 0:
        raise CodecError("partial sums dip below zero before the final step")
    counts = steps + 1
    parent = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    status = _decode_loop(counts, parent, depth)
    if status != 0:
        raise CodecError("steps do not close into a single tree")
    return PlaneTree(parent=parent, children_counts=counts, depth=depth)


@njit(cache=True)
def _height_loop(steps, heights):
    n = steps.shape[0]
    stack = np.empty(n + 1, dtype=np.int64)
    top = -1
    level = 0
    for k in range(n):
        while top >= 0 and stack[top] > level:
            top -= 1
        heights[k] = top + 1
        top += 1
        stack[top] = level
        level += steps[k]
    return heights


def height_process(path: LukasiewiczPath) -> np.ndarray:
    """H_k = #{i < k : L_i = min over [i, k] of L}; equals the depth of u_k."""
    steps = np.asarray(path.steps, dtype=np.int64)
    heights = np.empty(len(steps), dtype=np.int64)
    return _height_loop(steps, heights)


@njit(cache=True)
def _contour_loop(counts, parent, first_child, next_sibling, out):
    n = counts.shape[0]
    pos = 0
    v = 0
    out[pos] = 0
    cursor = np.empty(n, dtype=np.int64)  # next unvisited child per vertex
    for k in range(n):
        cursor[k] = first_child[k]
    while True:
        c = cursor[v]
        if c >= 0:
            cursor[v] = next_sibling[c]
            v = c
        else:
            if v == 0:
                break
            v = parent[v]
        pos += 1
        out[pos] = v
    return pos + 1


def contour_walk(tree: PlaneTree) -> np.ndarray:
    """Depth-first boundary traversal: 2(n-1)+1 vertex indices, root to root."""
    n = tree.size
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    first_child = np.full(n, -1, dtype=np.int64)
    next_sibling = np.full(n, -1, dtype=np.int64)
    # children appear in increasing index order; build sibling lists backwards
    for k in range(n - 1, 0, -1):
        p = tree.parent[k]
        next_sibling[k] = first_child[p]
        first_child[p] = k
    out = np.empty(2 * (n - 1) + 1, dtype=np.int64)
    filled = _contour_loop(tree.children_counts, tree.parent, first_child, next_sibling, out)
    assert filled == len(out)
    return out


def sample_conditioned_tree(
    dist: OffspringDistribution,
    n: int,
    rng: np.random.Generator,
    budget: int = 10**6,
) -> PlaneTree:
    """Exact sampler of the critical tree conditioned on having n vertices.

    Draw n i.i.d. offspring counts, accept when they sum to n-1 (expected
    Theta(sqrt n) attempts by the local CLT), then rotate to the unique
    cyclic shift that is a valid excursion.
    """
    if not dist.admissible(n):
        raise AdmissibilityError(
            f"size {n} has probability zero: n-1 must be divisible by {dist.support_gcd}"
        )
    for _ in range(budget):
        counts = dist.sample_counts(n, rng)
        if counts.sum() == n - 1:
            break
    else:
        raise SamplingBudgetError(f"no offspring vector with sum {n - 1} in {budget} attempts")
    steps = counts.astype(np.int64) - 1
    sums = np.cumsum(steps)
    k = int(np.argmin(sums)) + 1
    if k < n:
        steps = np.concatenate([steps[k:], steps[:k]])
    return decode(LukasiewiczPath(steps=steps))


# ---------------------------------------------------------------------------
# spine forests
# ---------------------------------------------------------------------------

T_INF = "T_inf"
T_INF_STAR = "T_inf_star"


@dataclass
class SpineForest:
    """Prefix of an infinite spine model explored to a requested length.

    ``parent`` uses exploration indices; -1 marks the root and values <= -2
    encode an unexplored spine vertex: parent = -(k+2) means spine vertex k.
    For the stationary model the explored sequence coincides index-by-index
    with the concatenated forest of attached copies, the first copy being
    rooted at the spine origin itself.
    """

    model: str
    dist: OffspringDistribution
    spine_offspring: np.ndarray        # D_k for the grown spine prefix
    Sigma: np.ndarray                  # Sigma_0 = 1, Sigma_k = 1 + D_1 + ... + D_k
    spine_positions_in_exploration: np.ndarray
    parent: np.ndarray
    heights: np.ndarray
    is_spine: np.ndarray
    attach_spine_index: np.ndarray     # spine vertex whose subtree holds each entry
    sigma: np.ndarray | None           # stationary model only
    lwalk_steps: np.ndarray | None     # forest walk steps (stationary model only)

    @property
    def exploration_length(self) -> int:
        return len(self.parent)

    @property
    def exploration(self) -> np.ndarray:
        return np.arange(self.exploration_length)


def _stream_tree_prefix(dist, rng, limit):
    """Lukasiewicz steps of one unconditioned tree, stopped after ``limit`` vertices.

    Returns (steps, complete); complete is False when the cap interrupted the
    tree, which is fine for prefix laws.
    """
    chunks = []
    total = 0
    level = 0
    block = 256
    while True:
        counts = dist.sample_counts(min(block, max(limit - total, 1)), rng)
        steps = counts.astype(np.int64) - 1
        lvl = level + np.cumsum(steps)
        hit = np.nonzero(lvl == -1)[0]
        if hit.size:
            cut = int(hit[0]) + 1
            chunks.append(steps[:cut])
            return np.concatenate(chunks), True
        chunks.append(steps)
        total += len(steps)
        level = int(lvl[-1])
        if total >= limit:
            return np.concatenate(chunks), False
        block = min(block * 4, 1 << 16)


def sample_spine_forest(
    dist: OffspringDistribution,
    model: str,
    min_exploration_length: int,
    rng: np.random.Generator,
) -> SpineForest:
    """Grow a spine model until the exploration sequence reaches the target length.

    The spine continuation is lexicographically last among each spine
    vertex's children, so all subtrees hanging off spine vertex k are
    explored before anything at k+1.
    """
    if model not in (T_INF, T_INF_STAR):
        raise ValueError(f"model must be {T_INF!r} or {T_INF_STAR!r}")
    m = int(min_exploration_length)
    if m < 1:
        raise ValueError("min_exploration_length must be >= 1")

    star = model == T_INF_STAR
    D = [1] if star else [int(dist.sample_tail_counts(1, rng)[0])]
    Sigma = [1]

    parent: list[int] = []
    heights: list[int] = []
    is_spine: list[bool] = []
    attach: list[int] = []
    sigma: list[int] = []
    lsteps: list[np.ndarray] = []
    spine_pos: list[int] = []

    # the spine origin is explored in both models: as tree 1's root (stationary
    # model, where the first copy is rooted at the origin) or directly
    spine_pos.append(0)

    k = 0            # spine vertex whose subtrees are being attached
    t = 1            # 1-indexed count of copies placed so far (current copy)
    trees_at_k = D[0]
    placed_at_k = 0

    def explored() -> int:
        return len(parent)

    if not star:
        parent.append(-1)
        heights.append(0)
        is_spine.append(True)
        attach.append(0)

    spine_cap = max(1 << 24, 64 * m)
    while explored() < m:
        while placed_at_k >= trees_at_k:
            # move down the spine
            k += 1
            if k > spine_cap:
                raise SamplingBudgetError(f"spine grew past {spine_cap} vertices")
            d_k = int(dist.sample_tail_counts(1, rng)[0])
            D.append(d_k)
            Sigma.append(Sigma[-1] + d_k)
            trees_at_k = d_k
            placed_at_k = 0
            if not star:
                spine_pos.append(explored())
                parent.append(spine_pos[k - 1])
                heights.append(k)
                is_spine.append(True)
                attach.append(k)
                if explored() >= m:
                    break
        if explored() >= m:
            break

        steps, complete = _stream_tree_prefix(dist, rng, m - explored() + 1)
        n_t = len(steps)
        counts = steps + 1
        par = np.full(n_t, -1, dtype=np.int64)
        dep = np.zeros(n_t, dtype=np.int64)
        if complete:
            status = _decode_loop(counts, par, dep)
            assert status == 0
        else:
            _partial_decode(counts, par, dep)

        base = explored()
        if star:
            root_height = 0 if k == 0 else k + 1
            root_parent = -1 if k == 0 else -(k + 2)
        else:
            root_height = k + 1
            root_parent = spine_pos[k]
        for v in range(n_t):
            if par[v] < 0:
                parent.append(root_parent)
            else:
                parent.append(base + int(par[v]))
            heights.append(root_height + int(dep[v]))
            is_spine.append(False)
            attach.append(k)
        if star:
            lsteps.append(steps)
            sig_t = 0 if t == 1 else _sigma_of_tree(Sigma, t)
            sigma.extend([sig_t] * n_t)
        placed_at_k += 1
        t += 1

    n_keep = m
    return SpineForest(
        model=model,
        dist=dist,
        spine_offspring=np.array(D, dtype=np.int64),
        Sigma=np.array(Sigma, dtype=np.int64),
        spine_positions_in_exploration=np.array(spine_pos, dtype=np.int64),
        parent=np.array(parent[:n_keep], dtype=np.int64),
        heights=np.array(heights[:n_keep], dtype=np.int64),
        is_spine=np.array(is_spine[:n_keep], dtype=bool),
        attach_spine_index=np.array(attach[:n_keep], dtype=np.int64),
        sigma=np.array(sigma[:n_keep], dtype=np.int64) if star else None,
        lwalk_steps=np.concatenate(lsteps)[:n_keep] if star and lsteps else None,
    )


def _sigma_of_tree(Sigma, t):
    """min{k : Sigma_k >= t} for the copy index t (valid once Sigma reaches t)."""
    for k, s in enumerate(Sigma):
        if s >= t:
            return k
    raise AssertionError("Sigma bookkeeping out of sync")


@njit(cache=True)
def _partial_decode(counts, parent, depth):
    """Decode a tree prefix that may still have open vertices at the end."""
    n = counts.shape[0]
    stack = np.empty(n + 1, dtype=np.int64)
    remaining = np.empty(n, dtype=np.int64)
    top = 0
    stack[0] = 0
    remaining[0] = counts[0]
    for k in range(1, n):
        while top >= 0 and remaining[stack[top]] == 0:
            top -= 1
        p = stack[top]
        parent[k] = p
        depth[k] = depth[p] + 1
        remaining[p] -= 1
        remaining[k] = counts[k]
        top += 1
        stack[top] = k


# ---------------------------------------------------------------------------
# text export
# ---------------------------------------------------------------------------


def export_tree(tree: PlaneTree, path: str) -> None:
    """One line per vertex in lexicographic order: its children count."""
    np.savetxt(path, tree.children_counts, fmt="%d")


def import_tree(path: str) -> PlaneTree:
    counts = np.loadtxt(path, dtype=np.int64, ndmin=1)
    return decode(LukasiewiczPath(steps=counts - 1))
