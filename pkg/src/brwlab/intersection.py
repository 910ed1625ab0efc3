"""Probing the non-hitting probability of a walk range from nearby points.

The supremum over the lambda n^(1/4)-neighborhood is approximated from below
by a finite set of probe points: each probe is a uniform range site plus a
random offset (uniform direction, radius uniform up to the neighborhood
scale); probes landing inside the range are rejected with probability 1/2 to
mix boundary and interior starts.  Escape estimates are one-sided (the kill
radius inflates them uniformly), which cancels in the lambda/n trend
comparisons these curves feed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .capacity import escape_probability_mc
from .errors import PreconditionError
from .trees import OffspringDistribution, sample_conditioned_tree
from .walks import BranchingWalk, StepDistribution, assign_positions, walk_range


@dataclass
class ProbeReport:
    n: int
    lam: float
    probe_points: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    max_escape: float
    mean_escape: float


def _draw_probes(sites, count, radius, rng):
    """Range site plus offset; in-range landings kept only with probability 1/2."""
    dim = sites.shape[1]
    site_set = {tuple(s) for s in sites}
    probes = np.empty((count, dim), dtype=np.int64)
    drawn = 0
    while drawn < count:
        base = sites[int(rng.integers(0, len(sites)))]
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        offset = np.rint(direction * rng.uniform(0.0, radius)).astype(np.int64)
        point = base.astype(np.int64) + offset
        if tuple(point) in site_set and rng.random() < 0.5:
            continue
        probes[drawn] = point
        drawn += 1
    return probes


def probe_escape_sup(
    bw: BranchingWalk,
    lam: float,
    probe_count: int,
    mc_reps: int,
    rng: np.random.Generator,
    R_kill: float | None = None,
    kill_factor: float = 8.0,
) -> ProbeReport:
    """Max and mean escape probability over random probes near the range.

    The reported max is a lower bound of the true neighborhood supremum.
    """
    if lam <= 0.0 or probe_count < 1:
        raise PreconditionError("need lam > 0 and at least one probe")
    rs = walk_range(bw)
    n = bw.size
    radius = lam * n ** 0.25
    if R_kill is None:
        R_kill = max(64.0, kill_factor * (rs.max_norm + radius))
    if R_kill <= rs.max_norm + radius:
        raise PreconditionError("kill radius must dominate the probe neighborhood")
    probes = _draw_probes(rs.sites, probe_count, radius, rng)
    estimates = np.empty(probe_count)
    stderrs = np.empty(probe_count)
    for i, probe in enumerate(probes):
        estimates[i], stderrs[i] = escape_probability_mc(probe, rs, R_kill, mc_reps, rng)
    return ProbeReport(
        n=n,
        lam=lam,
        probe_points=probes,
        estimates=estimates,
        stderrs=stderrs,
        max_escape=float(estimates.max()),
        mean_escape=float(estimates.mean()),
    )


def intersection_curve(
    dist: OffspringDistribution,
    theta: StepDistribution,
    n_list,
    lambda_list,
    replicas: int,
    probe_count: int,
    mc_reps: int,
    seed_for=None,
    rng: np.random.Generator | None = None,
    kill_factor: float = 8.0,
    on_error=None,
):
    """One probe report per (n, lambda, replica); rows keep going past failures.

    ``seed_for(n, lam, replica)`` pins per-cell seeds for replicable parallel
    runs; a plain ``rng`` drives everything sequentially otherwise.
    """
    if not len(n_list) or not len(lambda_list):
        raise PreconditionError("need nonempty n and lambda grids")
    rows = []
    for n in n_list:
        for lam in lambda_list:
            for rep in range(replicas):
                if seed_for is not None:
                    cell_rng = np.random.default_rng(seed_for(n, lam, rep))
                else:
                    cell_rng = rng if rng is not None else np.random.default_rng()
                t0 = time.perf_counter()
                try:
                    tree = sample_conditioned_tree(dist, n, cell_rng)
                    bw = assign_positions(tree, theta, cell_rng)
                    report = probe_escape_sup(
                        bw, lam, probe_count, mc_reps, cell_rng, kill_factor=kill_factor
                    )
                except Exception as exc:  # noqa: BLE001 - flush partial results
                    if on_error is None:
                        raise
                    on_error(n, lam, rep, exc)
                    continue
                rows.append(
                    {
                        "dim": theta.dim,
                        "n": n,
                        "lambda": lam,
                        "replica": rep,
                        "max_escape": report.max_escape,
                        "mean_escape": report.mean_escape,
                        "wall_seconds": time.perf_counter() - t0,
                    }
                )
    return rows
