"""Lattice and continuum Green function tests.

The reference value at the origin in d=3 is the classical simple-cubic
lattice integral, known in closed form via gamma functions:
1.5163860591519780...  Everything else is pinned by discrete harmonicity,
symmetry, and the far-field coefficient formulas.
"""

import numpy as np
import pytest
from numba import njit
from scipy import special

import brwlab as bl
from brwlab.errors import (
    CacheFormatError,
    OutOfTableError,
    SingularityError,
    UnsupportedDimensionError,
)
from brwlab.green import (
    EXACT_MAX_SUPNORM,
    green,
    harmonicity_residual,
    load_cache,
    save_cache,
)

SIMPLE_CUBIC_ORIGIN = 1.5163860591519780


def test_origin_matches_lattice_constant():
    assert abs(bl.green_exact(3, (0, 0, 0)) - SIMPLE_CUBIC_ORIGIN) < 1e-10


def test_origin_within_acceptance_window():
    assert 1.5163 <= bl.green_exact(3, (0, 0, 0)) <= 1.5165


@njit(cache=True)
def _count_origin_visits(n_walkers, n_steps, seed):
    """Independent Monte Carlo oracle: mean number of visits to 0 (time 0 included)."""
    total = 0
    state = np.uint64(seed)
    for w in range(n_walkers):
        x = 0
        y = 0
        z = 0
        visits = 1
        for _ in range(n_steps):
            state = state + np.uint64(0x9E3779B97F4A7C15)
            t = state
            t = (t ^ (t >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            t = (t ^ (t >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            t = t ^ (t >> np.uint64(31))
            move = (t >> np.uint64(32)) % np.uint64(6)
            if move == 0:
                x += 1
            elif move == 1:
                x -= 1
            elif move == 2:
                y += 1
            elif move == 3:
                y -= 1
            elif move == 4:
                z += 1
            else:
                z -= 1
            if x == 0 and y == 0 and z == 0:
                visits += 1
        total += visits
    return total / n_walkers


def test_origin_against_visit_count_oracle():
    """Return-count MC agrees with the quadrature within its own error budget."""
    walkers, steps = 40_000, 30_000
    mc = _count_origin_visits(walkers, steps, 12345)
    # visit count has variance ~ G^2 - G; truncation drops ~ (3/2pi)^{3/2} * 2 / sqrt(steps)
    sigma = np.sqrt((SIMPLE_CUBIC_ORIGIN**2 - SIMPLE_CUBIC_ORIGIN) / walkers)
    trunc = (3 / (2 * np.pi)) ** 1.5 * 2.0 / np.sqrt(steps)
    assert abs(mc - SIMPLE_CUBIC_ORIGIN) < 4 * sigma + trunc


def test_unit_neighbor_forced_by_origin_harmonicity():
    g0 = bl.green_exact(3, (0, 0, 0))
    assert abs(bl.green_exact(3, (1, 0, 0)) - (g0 - 1.0)) < 1e-9


def test_symmetry_under_signs_and_permutations(rng):
    for d in (3, 4, 5):
        x = rng.integers(-20, 21, size=d)
        base = bl.green_exact(d, x)
        assert bl.green_exact(d, -x) == base
        assert bl.green_exact(d, x[rng.permutation(d)]) == base
        flipped = x * rng.choice([-1, 1], size=d)
        assert bl.green_exact(d, flipped) == base


@pytest.mark.parametrize("dim", [3, 4, 5])
def test_discrete_harmonicity_spot(dim, rng):
    for _ in range(10):
        x = rng.integers(-10, 11, size=dim)
        if not x.any():
            continue
        nb = []
        for j in range(dim):
            for s in (1, -1):
                y = x.copy()
                y[j] += s
                nb.append(bl.green_exact(dim, y))
        assert abs(bl.green_exact(dim, x) - np.mean(nb)) < 1e-8


def test_table_harmonicity_everywhere(tables):
    for d, table in tables.items():
        assert harmonicity_residual(table.dense(), d) < 10 * table.quadrature_tol


def test_table_values_positive_and_monotone_on_axis(tables):
    for d, table in tables.items():
        assert all(v > 0 for v in table.table.values())
        axis = np.zeros((table.near_radius + 1, d), dtype=np.int64)
        axis[:, 0] = np.arange(table.near_radius + 1)
        vals = green(table, axis)
        assert (np.diff(vals) < 0).all()


def test_c1_closed_forms():
    assert abs(bl.c1_constant(3) - 3 / (2 * np.pi)) < 1e-14
    assert abs(bl.c1_constant(4) - 2 / np.pi**2) < 1e-14
    assert abs(bl.c1_constant(5) - 5 / (4 * np.pi**2)) < 1e-14
    with pytest.raises(UnsupportedDimensionError):
        bl.c1_constant(6)


def test_continuum_green_values():
    assert abs(bl.g_continuum(3, (1, 0, 0)) - 1 / (2 * np.pi)) < 1e-14
    one = bl.g_continuum(3, (1, 0, 0))
    assert abs(bl.g_continuum(3, (2, 0, 0)) - one / 2) < 1e-14
    want5 = special.gamma(1.5) / (2 * np.pi**2.5)
    assert abs(bl.g_continuum(5, (1, 0, 0, 0, 0)) - want5) < 1e-14
    with pytest.raises(SingularityError):
        bl.g_continuum(3, (0, 0, 0))


@pytest.mark.parametrize("dim", [3, 4, 5])
def test_lattice_to_continuum_factor(dim):
    """G/g approaches the dimension itself at moderate distance."""
    x = (50,) + (0,) * (dim - 1)
    ratio = bl.green_exact(dim, x) / bl.g_continuum(dim, x)
    assert abs(ratio - dim) <= 0.02 * dim


def test_far_branch_values(table3, table5):
    x = np.zeros(3, dtype=np.int64)
    x[0] = 10_000
    assert abs(green(table3, x) - bl.c1_constant(3) / 1e4) < 1e-18
    y = np.zeros(5, dtype=np.int64)
    y[0] = 10_000
    assert abs(green(table5, y) - bl.c1_constant(5) * 1e-12) < 1e-24


def test_handoff_below_one_percent(tables):
    for d, table in tables.items():
        r0 = table.near_radius
        x = np.zeros(d, dtype=np.int64)
        x[0] = r0
        exact = green(table, x)
        asym = table.c1 * float(r0) ** (2 - d)
        assert abs(exact - asym) / asym < 0.01


def test_exact_cutoff_and_dimension_errors():
    with pytest.raises(OutOfTableError):
        bl.green_exact(3, (EXACT_MAX_SUPNORM + 1, 0, 0))
    with pytest.raises(UnsupportedDimensionError):
        bl.green_exact(6, (0,) * 6)
    with pytest.raises(ValueError):
        bl.green_exact(3, (0, 0))


def test_cache_round_trip_and_corruption(tmp_path):
    table = bl.build_green_table(3, near_radius=6)
    path = str(tmp_path / "g3.grnt")
    save_cache(table, path)
    loaded = load_cache(path)
    assert loaded.near_radius == 6
    assert np.allclose(loaded.dense(), table.dense(), atol=0, rtol=0)
    raw = bytearray(open(path, "rb").read())
    raw[30] ^= 0xFF  # flip bits inside the first stored value
    open(path, "wb").write(bytes(raw))
    with pytest.raises(CacheFormatError):
        load_cache(path)


def test_cache_env_dir_round_trip(tmp_path, monkeypatch):
    monkeypatch.setenv("BRWLAB_CACHE_DIR", str(tmp_path))
    first = bl.build_green_table(3, near_radius=16)
    assert (tmp_path / "green_d3_r16.grnt").exists()
    second = bl.build_green_table(3, near_radius=16)
    assert np.array_equal(first.dense(), second.dense())


def test_radius_too_small_for_handoff():
    with pytest.raises(ValueError, match="hand-off"):
        bl.build_green_table(3, near_radius=4)


def test_canonical_table_keys(table3):
    for key in list(table3.table)[:50]:
        assert list(key) == sorted(key)
        assert all(0 <= c <= table3.near_radius for c in key)
