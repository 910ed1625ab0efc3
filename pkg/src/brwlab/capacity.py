"""Discrete capacity of finite lattice sets by three routes.

Exact route: the escape-probability vector solves the dense symmetric
positive-definite system  sum_y G(x - y) v_y = 1  over the set, solved here
by matrix-free conjugate gradients whose mat-vec streams over all site pairs
(far pairs through the radial asymptotic lookup, near pairs through the
anisotropy correction table).  Memory stays O(#A).

Monte Carlo routes: direct escape sampling from the set, and a far-point
hitting-probability normalization.  Both ride the same walk engine; each
reports a one-sided bias bound alongside the binomial error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import PreconditionError, SolverError
from .green import GreenTable, green
from .walks import RangeSet

EXACT = "exact"
MC_ESCAPE = "mc_escape"
FAR_POINT = "far_point"


@dataclass
class EquilibriumVector:
    """Escape probabilities per site; their sum is the capacity."""

    sites: np.ndarray
    v: np.ndarray
    capacity: float
    residual: float


@dataclass
class CapEstimate:
    value: float
    stderr: float
    reps: int
    method: str
    bias_bound: float | None = None

    def csv_row(self) -> str:
        bias = "" if self.bias_bound is None else f"{self.bias_bound:.12g}"
        return f"{self.method},{self.value:.12g},{self.stderr:.12g},{self.reps},{bias}"


def _as_sites(A) -> np.ndarray:
    if isinstance(A, RangeSet):
        return A.sites
    sites = np.unique(np.asarray(A, dtype=np.int32), axis=0)
    if sites.ndim != 2:
        raise PreconditionError("a site set must be an (n, d) array of lattice points")
    return sites


def _max_norm(sites: np.ndarray) -> float:
    return float(np.sqrt((sites.astype(np.int64) ** 2).sum(axis=1).max()))


def _correction_table(table: GreenTable) -> np.ndarray:
    """Flat near-field correction G - c1 r^(2-d), side R0+2 with a zero sentinel rim.

    Entry [0,...,0] holds G(0) - c1, pairing with far_lut[0] = c1 so that the
    r^2 -> max(r^2, 1) convention reproduces the exact diagonal.
    """
    cached = getattr(table, "_corr_flat", None)
    if cached is not None:
        return cached
    d = table.dim
    r0 = table.near_radius
    side = r0 + 2
    corr = np.zeros((side,) * d)
    idx = np.indices((r0 + 1,) * d)
    r2 = (idx.astype(float) ** 2).sum(axis=0)
    r2.flat[0] = 1.0
    corr[tuple(slice(0, r0 + 1) for _ in range(d))] = (
        table.dense() - table.c1 * r2 ** ((2.0 - d) / 2.0)
    )
    flat = np.ascontiguousarray(corr.ravel())
    table._corr_flat = flat
    return flat


def _far_lut(table: GreenTable, max_r2: int) -> np.ndarray:
    r2 = np.arange(max_r2 + 1, dtype=float)
    r2[0] = 1.0
    lut = table.c1 * r2 ** ((2.0 - table.dim) / 2.0)
    return lut


_MATVECS = {3: _kernels.matvec_green_3, 4: _kernels.matvec_green_4, 5: _kernels.matvec_green_5}


class GreenSystem:
    """Mat-vec closure for one site set against one Green table."""

    def __init__(self, sites: np.ndarray, table: GreenTable):
        self.table = table
        self.sites = sites
        self.dim = table.dim
        self.cols = [np.ascontiguousarray(sites[:, j].astype(np.int32)) for j in range(self.dim)]
        span = sites.astype(np.int64).max(axis=0) - sites.astype(np.int64).min(axis=0)
        self.corr = _correction_table(table)
        self.lut = _far_lut(table, int((span**2).sum()) + 1)
        self._out = np.empty(len(sites))

    def matvec(self, v: np.ndarray) -> np.ndarray:
        fn = _MATVECS[self.dim]
        fn(*self.cols, v, self.corr, self.lut, self.table.near_radius, self._out)
        return self._out

    def row(self, i: int) -> np.ndarray:
        """Dense row i, for testing against direct green() evaluation."""
        diffs = self.sites.astype(np.int64) - self.sites[i].astype(np.int64)
        return np.asarray(green(self.table, diffs))


def cap_exact(A, table: GreenTable, tol: float = 1e-8, max_iter: int | None = None) -> EquilibriumVector:
    """Solve the Green system for the escape vector by conjugate gradients.

    Relative residual <= tol (default 1e-8); raises SolverError with the
    achieved residual if 10 * #A iterations do not get there.
    """
    sites = _as_sites(A)
    n = len(sites)
    if n == 0:
        raise PreconditionError("capacity of the empty set is undefined")
    if table.dim != sites.shape[1]:
        raise PreconditionError(f"table dimension {table.dim} != site dimension {sites.shape[1]}")
    system = GreenSystem(sites, table)
    b = np.ones(n)
    if max_iter is None:
        max_iter = max(10 * n, 32)
    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    nb = math.sqrt(n)
    relres = math.sqrt(rs) / nb
    it = 0
    while relres > tol:
        if it >= max_iter:
            raise SolverError(f"CG stalled at relative residual {relres:.3e} after {it} iterations")
        Ap = system.matvec(p)
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        relres = math.sqrt(rs) / nb
        it += 1
    return EquilibriumVector(sites=sites, v=x, capacity=float(x.sum()), residual=relres)


# ---------------------------------------------------------------------------
# walk engine plumbing
# ---------------------------------------------------------------------------

_MAX_BITMAP_CELLS = 1 << 31


def _site_bitmap(sites: np.ndarray):
    """Bit-packed occupancy over the site bounding box."""
    lo = sites.min(axis=0).astype(np.int64)
    hi = sites.max(axis=0).astype(np.int64)
    shape = hi - lo + 1
    volume = int(np.prod(shape))
    if volume > _MAX_BITMAP_CELLS:
        raise PreconditionError(
            f"site bounding box has {volume} cells; too large for the walk engine bitmap"
        )
    strides = np.ones(len(shape), dtype=np.int64)
    for j in range(len(shape) - 2, -1, -1):
        strides[j] = strides[j + 1] * shape[j + 1]
    idx = ((sites.astype(np.int64) - lo) * strides).sum(axis=1)
    bits = np.zeros((volume + 7) // 8, dtype=np.uint8)
    np.bitwise_or.at(bits, idx >> 3, (1 << (idx & 7)).astype(np.uint8))
    return bits, lo, hi, strides


def _run_walkers(starts: np.ndarray, sites: np.ndarray, r2_kill: int, rng: np.random.Generator):
    """Outcome (hit/escaped) and exit position per walker."""
    bits, lo, hi, strides = _site_bitmap(sites)
    W = len(starts)
    outcome = np.empty(W, dtype=np.uint8)
    exits = np.empty_like(starts, dtype=np.int64)
    base_seed = np.uint64(rng.integers(0, 2**62))
    max_steps = int(64 * r2_kill + 1_000_000)
    _kernels.walk_escape(
        starts.astype(np.int64), base_seed, bits, lo, hi, strides,
        np.int64(r2_kill), max_steps, outcome, exits,
    )
    if (outcome == _kernels.WALK_UNRESOLVED).any():
        raise SolverError("walkers exceeded the step guard; kill radius is pathological")
    return outcome, exits


def escape_probability_mc(x, A, R_kill: float, reps: int, rng: np.random.Generator):
    """Fraction of SRW paths from x that leave Ball(R_kill) before entering A.

    Time zero counts: x inside A gives exactly 0.  The empty set gives
    exactly 1.  Returns (estimate, stderr).
    """
    if reps <= 0:
        raise PreconditionError("reps must be positive")
    if isinstance(A, RangeSet):
        sites = A.sites
    else:
        sites = np.asarray(A, dtype=np.int32)
    x = np.asarray(x, dtype=np.int64)
    if sites.size == 0:
        return 1.0, 0.0
    sites = sites.reshape(-1, len(x))
    if R_kill <= max(float(np.linalg.norm(x)), _max_norm(sites)):
        raise PreconditionError("kill radius must exceed both |x| and the set radius")
    if (sites == x[None, :]).all(axis=1).any():
        return 0.0, 0.0
    starts = np.broadcast_to(x, (reps, len(x))).copy()
    outcome, _ = _run_walkers(starts, sites, int(R_kill * R_kill), rng)
    esc = float((outcome == _kernels.WALK_ESCAPED).mean())
    return esc, math.sqrt(max(esc * (1.0 - esc), 1e-300) / reps)


def cap_mc_escape(
    A,
    table: GreenTable,
    reps: int,
    rng: np.random.Generator,
    R_factor: float = 8.0,
    min_radius: float = 64.0,
) -> CapEstimate:
    """Capacity as #A times the uniform-start escape fraction.

    Walkers run until they return to the set or exit the origin-centered
    ball of radius max(min_radius, R_factor * max|A|).  A single-site set
    gets an exact kill-radius correction (the return probability from the
    exit point is a Green-function ratio), so its estimate is unbiased; for
    larger sets the escape-after-exit mass is one-sided and reported in
    bias_bound together with the far-point distance term.
    """
    if reps <= 0:
        raise PreconditionError("reps must be positive")
    if R_factor < 4.0:
        raise PreconditionError("R_factor must be at least 4")
    sites = _as_sites(A)
    n = len(sites)
    max_norm = _max_norm(sites)
    radius = max(min_radius, R_factor * max_norm)
    idx_rng = np.random.default_rng(rng.integers(0, 2**62))  # dedicated start-picker stream
    starts = sites[idx_rng.integers(0, n, size=reps)]
    outcome, exits = _run_walkers(starts, sites, int(radius * radius), rng)
    escaped = outcome == _kernels.WALK_ESCAPED
    if n == 1:
        p_return = np.asarray(
            green(table, exits[escaped] - sites[0].astype(np.int64))
        ) / table.origin()
        revive = rng.random(int(escaped.sum())) < p_return
        esc_count = int(escaped.sum()) - int(revive.sum())
        bias_term = 0.0
    else:
        esc_count = int(escaped.sum())
        bias_term = None
    frac = esc_count / reps
    value = n * frac
    stderr = n * math.sqrt(max(frac * (1.0 - frac), 1e-300) / reps)
    if bias_term is None:
        kill_return = min(1.0, value * table.c1 * radius ** (2.0 - table.dim))
        bias_term = float(value * (max_norm / radius + kill_return))
    return CapEstimate(value=value, stderr=stderr, reps=reps, method=MC_ESCAPE, bias_bound=bias_term)


def cap_farpoint(
    A,
    table: GreenTable,
    x_far,
    reps: int,
    rng: np.random.Generator,
    kill_factor: float = 8.0,
) -> CapEstimate:
    """Capacity as hitting probability from a far point divided by G(x_far).

    Walks are killed on exiting Ball(kill_factor * |x_far|); the lost hitting
    mass scales like (|x_far| / R_kill)^(d-2) relative and goes into
    bias_bound with the finite-distance term max|A| / |x_far|.
    """
    if reps <= 0:
        raise PreconditionError("reps must be positive")
    sites = _as_sites(A)
    x_far = np.asarray(x_far, dtype=np.int64)
    r_far = float(np.linalg.norm(x_far))
    max_norm = _max_norm(sites)
    if r_far < 2.0 * max_norm or r_far == 0.0:
        raise PreconditionError(f"|x_far| = {r_far:.1f} must be at least 2 max|A| = {2 * max_norm:.1f}")
    r_kill = kill_factor * r_far
    starts = np.broadcast_to(x_far, (reps, len(x_far))).copy()
    outcome, _ = _run_walkers(starts, sites, int(r_kill * r_kill), rng)
    p_hit = float((outcome == _kernels.WALK_HIT).mean())
    g_far = float(green(table, x_far))
    value = p_hit / g_far
    stderr = math.sqrt(max(p_hit * (1.0 - p_hit), 1e-300) / reps) / g_far
    bias = value * (max_norm / r_far + (r_far / r_kill) ** (table.dim - 2))
    return CapEstimate(value=value, stderr=stderr, reps=reps, method=FAR_POINT, bias_bound=bias)
