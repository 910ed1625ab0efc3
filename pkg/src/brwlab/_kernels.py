"""Numba kernels: matrix-free Green mat-vecs and lattice walk engines.

The mat-vec kernels evaluate the capacity system matrix on the fly:
far pairs through a radial lookup on the integer squared distance, near
pairs through an anisotropy-correction table indexed by the sorted absolute
coordinate differences (branchless sorting networks keep the hot set inside
the canonical simplex, which is what makes the streaming pass cache-friendly).

Walk engines use one splitmix64 stream per walker derived from a single base
seed, so results are independent of the thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

# ---------------------------------------------------------------------------
# pairwise Green mat-vecs (streaming, O(#A) memory)
# ---------------------------------------------------------------------------


@njit(parallel=True, fastmath=True, cache=True)
def matvec_green_3(s0, s1, s2, v, corr, far_lut, r0, out):
    n = s0.shape[0]
    T = r0 + 2
    S = r0 + 1
    for i in prange(n):
        x0 = s0[i]
        x1 = s1[i]
        x2 = s2[i]
        acc = 0.0
        for j in range(n):
            d0 = abs(x0 - s0[j])
            d1 = abs(x1 - s1[j])
            d2 = abs(x2 - s2[j])
            r2 = d0 * d0 + d1 * d1 + d2 * d2
            e0 = min(d0, S)
            e1 = min(d1, S)
            e2 = min(d2, S)
            t = min(e0, e1)
            e1 = max(e0, e1)
            e0 = t
            t = min(e1, e2)
            e2 = max(e1, e2)
            e1 = t
            t = min(e0, e1)
            e1 = max(e0, e1)
            e0 = t
            acc += (far_lut[r2] + corr[(e0 * T + e1) * T + e2]) * v[j]
        out[i] = acc
    return out


@njit(parallel=True, fastmath=True, cache=True)
def matvec_green_4(s0, s1, s2, s3, v, corr, far_lut, r0, out):
    n = s0.shape[0]
    T = r0 + 2
    S = r0 + 1
    for i in prange(n):
        x0 = s0[i]
        x1 = s1[i]
        x2 = s2[i]
        x3 = s3[i]
        acc = 0.0
        for j in range(n):
            d0 = abs(x0 - s0[j])
            d1 = abs(x1 - s1[j])
            d2 = abs(x2 - s2[j])
            d3 = abs(x3 - s3[j])
            r2 = d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3
            e0 = min(d0, S)
            e1 = min(d1, S)
            e2 = min(d2, S)
            e3 = min(d3, S)
            t = min(e0, e1)
            e1 = max(e0, e1)
            e0 = t
            t = min(e2, e3)
            e3 = max(e2, e3)
            e2 = t
            t = min(e0, e2)
            e2 = max(e0, e2)
            e0 = t
            t = min(e1, e3)
            e3 = max(e1, e3)
            e1 = t
            t = min(e1, e2)
            e2 = max(e1, e2)
            e1 = t
            acc += (far_lut[r2] + corr[((e0 * T + e1) * T + e2) * T + e3]) * v[j]
        out[i] = acc
    return out


@njit(parallel=True, fastmath=True, cache=True)
def matvec_green_5(s0, s1, s2, s3, s4, v, corr, far_lut, r0, out):
    n = s0.shape[0]
    T = r0 + 2
    S = r0 + 1
    for i in prange(n):
        x0 = s0[i]
        x1 = s1[i]
        x2 = s2[i]
        x3 = s3[i]
        x4 = s4[i]
        acc = 0.0
        for j in range(n):
            d0 = abs(x0 - s0[j])
            d1 = abs(x1 - s1[j])
            d2 = abs(x2 - s2[j])
            d3 = abs(x3 - s3[j])
            d4 = abs(x4 - s4[j])
            r2 = d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3 + d4 * d4
            e0 = min(d0, S)
            e1 = min(d1, S)
            e2 = min(d2, S)
            e3 = min(d3, S)
            e4 = min(d4, S)
            t = min(e0, e1)
            e1 = max(e0, e1)
            e0 = t
            t = min(e3, e4)
            e4 = max(e3, e4)
            e3 = t
            t = min(e2, e4)
            e4 = max(e2, e4)
            e2 = t
            t = min(e2, e3)
            e3 = max(e2, e3)
            e2 = t
            t = min(e0, e3)
            e3 = max(e0, e3)
            e0 = t
            t = min(e0, e2)
            e2 = max(e0, e2)
            e0 = t
            t = min(e1, e4)
            e4 = max(e1, e4)
            e1 = t
            t = min(e1, e3)
            e3 = max(e1, e3)
            e1 = t
            t = min(e1, e2)
            e2 = max(e1, e2)
            e1 = t
            acc += (far_lut[r2] + corr[(((e0 * T + e1) * T + e2) * T + e3) * T + e4]) * v[j]
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# SRW escape walks with bit-packed site membership
# ---------------------------------------------------------------------------

_SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(inline="always")
def _splitmix(state):
    state = state + _SPLITMIX_GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return state, z


WALK_HIT = 0
WALK_ESCAPED = 1
WALK_UNRESOLVED = 2


@njit(parallel=True, cache=True)
def walk_escape(starts, base_seed, bits, lo, hi, strides, r2_kill, max_steps, outcome, exits):
    """SRW walkers from ``starts`` until they hit the site set or leave the kill ball.

    Membership is a bit test on the packed occupancy bitmap over the site
    bounding box; positions outside the box skip the test.  The start point
    itself is not tested (callers decide how to treat time zero).
    """
    W, dim = starts.shape
    for w in prange(W):
        state = np.uint64(base_seed) + np.uint64(w) * np.uint64(0x632BE59BD9B4E019)
        x = np.empty(dim, dtype=np.int64)
        for k in range(dim):
            x[k] = starts[w, k]
        result = WALK_UNRESOLVED
        for _ in range(max_steps):
            state, z = _splitmix(state)
            move = (z >> np.uint64(32)) % np.uint64(2 * dim)
            axis = move >> np.uint64(1)
            x[axis] += 1 - 2 * np.int64(move & np.uint64(1))
            r2 = np.int64(0)
            for k in range(dim):
                r2 += x[k] * x[k]
            if r2 >= r2_kill:
                result = WALK_ESCAPED
                break
            inside = True
            for k in range(dim):
                if x[k] < lo[k] or x[k] > hi[k]:
                    inside = False
                    break
            if inside:
                idx = np.int64(0)
                for k in range(dim):
                    idx += (x[k] - lo[k]) * strides[k]
                if (bits[idx >> 3] >> np.uint8(idx & 7)) & np.uint8(1):
                    result = WALK_HIT
                    break
        outcome[w] = result
        for k in range(dim):
            exits[w, k] = x[k]
    return outcome


@njit(parallel=True, cache=True)
def brw_positions_fill(parent, steps, positions):
    """positions[k] = positions[parent[k]] + steps[k] in one lexicographic pass.

    Parents precede children in lexicographic order, so a serial scan is
    correct; the outer prange is over coordinates only.
    """
    n, dim = positions.shape
    for c in prange(dim):
        for k in range(1, n):
            positions[k, c] = positions[parent[k], c] + steps[k, c]
    return positions
