"""Discrete capacity: exact solver against closed forms and a dense-solve
oracle, Monte Carlo routes against the exact route."""

import numpy as np
import pytest

import brwlab as bl
from brwlab.capacity import (
    GreenSystem,
    cap_exact,
    cap_farpoint,
    cap_mc_escape,
    escape_probability_mc,
)
from brwlab.errors import PreconditionError, SolverError
from brwlab.green import green


def lattice_ball(dim, radius):
    rng_axis = np.arange(-radius, radius + 1)
    grids = np.meshgrid(*([rng_axis] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    keep = (pts.astype(float) ** 2).sum(axis=1) <= radius**2
    return pts[keep].astype(np.int32)


def random_blob(dim, count, spread, rng):
    pts = rng.normal(0, spread, size=(count * 3, dim)).astype(np.int32)
    return np.unique(pts, axis=0)[:count]


# ---------------------------------------------------------------------------
# exact route
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("dim", [3, 4, 5])
def test_single_site_reciprocal_of_origin(dim, tables):
    table = tables[dim]
    ev = cap_exact(np.zeros((1, dim), dtype=np.int32), table)
    assert abs(ev.capacity - 1.0 / table.origin()) < 1e-8
    assert abs(ev.v[0] - 1.0 / table.origin()) < 1e-8
    assert ev.residual <= 1e-8


def test_two_site_closed_form(table3):
    A = np.array([[0, 0, 0], [1, 0, 0]], dtype=np.int32)
    g0 = table3.origin()
    g1 = bl.green_exact(3, (1, 0, 0))
    ev = cap_exact(A, table3)
    assert abs(ev.capacity - 2.0 / (g0 + g1)) < 1e-8
    assert ev.capacity == pytest.approx(0.9838781, abs=1e-6)


def test_matvec_matches_direct_green_rows(tables, rng):
    for dim, table in tables.items():
        sites = random_blob(dim, 50, 5, rng)
        system = GreenSystem(sites, table)
        v = rng.random(len(sites))
        got = system.matvec(v).copy()
        want = np.array([float(system.row(i) @ v) for i in range(len(sites))])
        assert np.abs(got - want).max() < 1e-12 * max(1.0, np.abs(want).max())


def test_cg_agrees_with_dense_solve(table3, rng):
    """Independent oracle: assemble the full matrix with green() and solve directly."""
    sites = random_blob(3, 120, 4, rng)
    ev = cap_exact(sites, table3)
    diffs = sites[:, None, :].astype(np.int64) - sites[None, :, :].astype(np.int64)
    M = np.asarray(green(table3, diffs.reshape(-1, 3))).reshape(len(sites), len(sites))
    v = np.linalg.solve(M, np.ones(len(sites)))
    assert abs(ev.capacity - v.sum()) < 1e-6
    assert np.abs(ev.v - v).max() < 1e-6


def test_equilibrium_bounds_and_monotonicity(table3, rng):
    for _ in range(20):
        big = random_blob(3, int(rng.integers(20, 120)), 6, rng)
        keep = rng.random(len(big)) < 0.6
        small = big[keep] if keep.any() else big[:1]
        cap_big = cap_exact(big, table3)
        cap_small = cap_exact(small, table3)
        assert (cap_big.v >= -1e-10).all() and (cap_big.v <= 1 + 1e-8).all()
        assert cap_small.capacity <= cap_big.capacity + 1e-7


def test_subadditivity(table3, rng):
    for _ in range(10):
        A = random_blob(3, 40, 4, rng)
        B = random_blob(3, 40, 4, rng) + np.array([3, -2, 1], dtype=np.int32)
        union = np.unique(np.vstack([A, B]), axis=0)
        cu = cap_exact(union, table3).capacity
        ca = cap_exact(A, table3).capacity
        cb = cap_exact(B, table3).capacity
        assert cu <= ca + cb + 1e-7


def test_translation_invariance_exact(table3, rng):
    A = random_blob(3, 60, 5, rng)
    shift = np.array([17, -9, 4], dtype=np.int32)
    assert cap_exact(A, table3).capacity == cap_exact(A + shift, table3).capacity


def test_solver_error_reports_residual(table3, rng):
    sites = random_blob(3, 200, 6, rng)
    with pytest.raises(SolverError, match="residual"):
        cap_exact(sites, table3, max_iter=2)


def test_empty_set_rejected(table3):
    with pytest.raises(PreconditionError):
        cap_exact(np.empty((0, 3), dtype=np.int32), table3)


# ---------------------------------------------------------------------------
# shared escape kernel
# ---------------------------------------------------------------------------


def test_escape_from_inside_is_zero(rng):
    A = np.array([[0, 0, 0], [1, 0, 0]], dtype=np.int64)
    est, se = escape_probability_mc(np.array([1, 0, 0]), A, 50.0, 100, rng)
    assert est == 0.0 and se == 0.0


def test_escape_from_empty_set_is_one(rng):
    est, se = escape_probability_mc(np.array([1, 0, 0]), np.empty((0, 3)), 50.0, 100, rng)
    assert est == 1.0 and se == 0.0


def test_escape_single_site_hitting_formula(table3, rng):
    """P(never hit 0 from 10 e1) = 1 - G(10e1)/G(0), plus one-sided kill bias."""
    want = 1.0 - bl.green_exact(3, (10, 0, 0)) / table3.origin()
    kill = 200.0
    est, se = escape_probability_mc(np.array([10, 0, 0]), np.zeros((1, 3), dtype=np.int64), kill, 20_000, rng)
    kill_bias = green(table3, np.array([int(kill), 0, 0])) / table3.origin()
    assert est >= want - 3 * se - 1e-9
    assert est <= want + 3 * se + kill_bias


def test_escape_kill_radius_precondition(rng):
    with pytest.raises(PreconditionError):
        escape_probability_mc(np.array([10, 0, 0]), np.zeros((1, 3), dtype=np.int64), 5.0, 10, rng)


# ---------------------------------------------------------------------------
# Monte Carlo escape route
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("dim", [3, 5])
def test_mc_escape_single_site(dim, tables, rng):
    table = tables[dim]
    est = cap_mc_escape(np.zeros((1, dim), dtype=np.int32), table, 100_000, rng)
    want = 1.0 / table.origin()
    # singleton gets the exact kill-radius correction: no bias term
    assert est.bias_bound == 0.0
    assert abs(est.value - want) <= 4 * est.stderr
    assert est.method == "mc_escape"


def test_mc_escape_ball_matches_exact(table3, rng):
    ball = lattice_ball(3, 6)
    exact = cap_exact(ball, table3).capacity
    est = cap_mc_escape(ball, table3, 40_000, rng)
    assert abs(est.value - exact) <= 3 * est.stderr + est.bias_bound


def test_mc_escape_preconditions(table3, rng):
    A = np.zeros((1, 3), dtype=np.int32)
    with pytest.raises(PreconditionError):
        cap_mc_escape(A, table3, 0, rng)
    with pytest.raises(PreconditionError):
        cap_mc_escape(A, table3, 10, rng, R_factor=2.0)


# ---------------------------------------------------------------------------
# far-point route
# ---------------------------------------------------------------------------


def test_farpoint_single_site(table3, rng):
    est = cap_farpoint(
        np.zeros((1, 3), dtype=np.int32), table3, np.array([100, 0, 0]), 20_000, rng,
        kill_factor=4.0,
    )
    want = 1.0 / table3.origin()
    assert abs(est.value - want) <= 3 * est.stderr + est.bias_bound


def test_farpoint_ball_ratio_linear_in_radius(table3, rng):
    """Capacity of lattice balls grows linearly; the far-point route sees it."""
    est10 = cap_farpoint(lattice_ball(3, 10), table3, np.array([25, 0, 0]), 8_000, rng)
    est20 = cap_farpoint(lattice_ball(3, 20), table3, np.array([50, 0, 0]), 8_000, rng)
    assert est20.value / est10.value == pytest.approx(2.0, abs=0.1)
    exact10 = cap_exact(lattice_ball(3, 10), table3).capacity
    exact20 = cap_exact(lattice_ball(3, 20), table3).capacity
    assert abs(est10.value - exact10) <= 3 * est10.stderr + est10.bias_bound
    assert abs(est20.value - exact20) <= 3 * est20.stderr + est20.bias_bound


def test_farpoint_boundary_precondition_runs(table3, rng):
    A = np.array([[2, 0, 0], [-2, 0, 0]], dtype=np.int32)  # max norm 2
    est = cap_farpoint(A, table3, np.array([4, 0, 0]), 500, rng)  # exactly 2 max|A|
    assert est.value >= 0
    with pytest.raises(PreconditionError):
        cap_farpoint(A, table3, np.array([3, 0, 0]), 500, rng)


def test_estimate_invariants(table3, rng):
    est = cap_mc_escape(lattice_ball(3, 3), table3, 5_000, rng)
    assert est.stderr >= 0 and est.bias_bound is not None
    row = est.csv_row()
    assert row.startswith("mc_escape,") and len(row.split(",")) == 5
