"""Branching random walks: spatial displacements along a tree, range sets, snakes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateTreeError, PreconditionError
from .trees import (
    T_INF_STAR,
    OffspringDistribution,
    PlaneTree,
    SpineForest,
    contour_walk,
    sample_spine_forest,
)

SRW_STEP = "srw"
ZERO_STEP = "zero"


@dataclass
class StepDistribution:
    """Symmetric lattice displacement law with finite (here bounded) support."""

    dim: int
    atoms: np.ndarray          # (k, dim) int32
    probs: np.ndarray          # (k,)
    symmetric: bool
    preset_name: str
    sigma_matrix: np.ndarray   # matrix square root of the step covariance

    @classmethod
    def srw(cls, dim: int) -> "StepDistribution":
        """Uniform on the 2d unit vectors; coordinate variance 1/d."""
        atoms = np.zeros((2 * dim, dim), dtype=np.int32)
        for j in range(dim):
            atoms[2 * j, j] = 1
            atoms[2 * j + 1, j] = -1
        probs = np.full(2 * dim, 1.0 / (2 * dim))
        return cls(
            dim=dim,
            atoms=atoms,
            probs=probs,
            symmetric=True,
            preset_name=SRW_STEP,
            sigma_matrix=np.eye(dim) / np.sqrt(dim),
        )

    @classmethod
    def zero(cls, dim: int) -> "StepDistribution":
        """Point mass at 0; degenerate, for smoke tests only."""
        return cls(
            dim=dim,
            atoms=np.zeros((1, dim), dtype=np.int32),
            probs=np.ones(1),
            symmetric=True,
            preset_name=ZERO_STEP,
            sigma_matrix=np.zeros((dim, dim)),
        )

    def validate(self) -> None:
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("atom probabilities must sum to 1")
        atom_index = {tuple(a): p for a, p in zip(map(tuple, self.atoms), self.probs)}
        for a, p in atom_index.items():
            neg = tuple(-c for c in a)
            if neg not in atom_index or abs(atom_index[neg] - p) > 1e-12:
                raise ValueError("step distribution is not symmetric")

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.preset_name == SRW_STEP:
            return rng.integers(0, 2 * self.dim, size=n)
        if self.preset_name == ZERO_STEP:
            return np.zeros(n, dtype=np.int64)
        return rng.choice(len(self.atoms), size=n, p=self.probs)


STEP_PRESETS = {SRW_STEP: StepDistribution.srw, ZERO_STEP: StepDistribution.zero}


def step_preset(name: str, dim: int) -> StepDistribution:
    if name not in STEP_PRESETS:
        raise ValueError(f"unknown step preset {name!r}; choose from {sorted(STEP_PRESETS)}")
    return STEP_PRESETS[name](dim)


@dataclass
class BranchingWalk:
    tree: object              # PlaneTree or SpineForest
    theta: StepDistribution
    positions: np.ndarray     # (n, dim) int32, exploration order, root at 0

    @property
    def size(self) -> int:
        return len(self.positions)


@dataclass
class RangeSet:
    """Deduplicated visited sites."""

    sites: np.ndarray         # (count, dim) int32, lexicographically sorted
    count: int
    max_norm: float

    @classmethod
    def from_points(cls, points: np.ndarray) -> "RangeSet":
        sites = np.unique(np.asarray(points, dtype=np.int32), axis=0)
        max_norm = float(np.sqrt((sites.astype(np.int64) ** 2).sum(axis=1).max()))
        return cls(sites=sites, count=len(sites), max_norm=max_norm)


@njit(cache=True)
def _fill_positions(parent, steps, spine_positions, positions):
    """positions[k] = positions[parent] + step; parent <= -2 points at spine vertex -(p+2)."""
    n = positions.shape[0]
    dim = positions.shape[1]
    for k in range(1, n):
        p = parent[k]
        for c in range(dim):
            if p >= 0:
                base = positions[p, c]
            else:
                base = spine_positions[-p - 2, c]
            positions[k, c] = base + steps[k, c]
    return positions


def assign_positions(tree, theta: StepDistribution, rng: np.random.Generator) -> BranchingWalk:
    """Materialize the walk: one fresh step per edge, summed along root paths.

    Consumes exactly size-1 atom draws for a plane tree; spine forests
    additionally consume one draw per spine-ray edge.
    """
    if isinstance(tree, PlaneTree):
        n = tree.size
        parent = tree.parent
        spine_positions = np.zeros((1, theta.dim), dtype=np.int32)
    elif isinstance(tree, SpineForest):
        n = tree.exploration_length
        parent = tree.parent
        n_spine = len(tree.spine_offspring)
        ray_steps = theta.atoms[theta.sample_indices(n_spine, rng)]
        spine_positions = np.vstack(
            [np.zeros((1, theta.dim), dtype=np.int32), np.cumsum(ray_steps, axis=0, dtype=np.int32)]
        )[:n_spine + 1]
    else:
        raise TypeError(f"cannot assign positions over {type(tree).__name__}")
    steps = np.zeros((n, theta.dim), dtype=np.int32)
    if n > 1:
        steps[1:] = theta.atoms[theta.sample_indices(n - 1, rng)]
    positions = np.zeros((n, theta.dim), dtype=np.int32)
    _fill_positions(parent, steps, spine_positions.astype(np.int32), positions)
    if n > 1 and int(np.abs(positions).max()) >= 2**28:
        # far below any desk-scale reach (coordinates grow like n^(1/4))
        raise OverflowError("positions approach the 32-bit coordinate range")
    return BranchingWalk(tree=tree, theta=theta, positions=positions)


def walk_range(bw: BranchingWalk) -> RangeSet:
    """The set of visited sites (the spec calls this operation `range`)."""
    return RangeSet.from_points(bw.positions)


def rescaled_snake(bw: BranchingWalk) -> np.ndarray:
    """Contour-ordered positions scaled by (n-1)^(-1/4): 2(n-1)+1 points in R^d."""
    if not isinstance(bw.tree, PlaneTree):
        raise TypeError("snake rescaling is defined over conditioned plane trees")
    n = bw.tree.size
    if n < 2:
        raise DegenerateTreeError("snake requires a tree with at least one edge")
    walk = contour_walk(bw.tree)
    return bw.positions[walk].astype(float) * (n - 1) ** -0.25


def validate_edges(bw: BranchingWalk) -> None:
    """Check every parent-child displacement is a support atom (debug aid)."""
    atoms = {tuple(a) for a in bw.theta.atoms}
    if isinstance(bw.tree, PlaneTree):
        parent = bw.tree.parent
        for k in range(1, bw.size):
            d = tuple(int(c) for c in (bw.positions[k] - bw.positions[parent[k]]))
            if d not in atoms:
                raise AssertionError(f"edge displacement {d} at vertex {k} not in support")
    else:
        raise TypeError("edge validation implemented for plane trees")


def stationarity_witness(
    dist: OffspringDistribution,
    theta: StepDistribution,
    k: int,
    i: int,
    sample_count: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Two paired samples for the translation-stationarity check.

    For each of ``sample_count`` independent stationary-model forests, record
    |V(u*_{i+k}) - V(u*_i)| and |V(u*_k)|.  Under translation invariance the
    two samples have the same law.
    """
    if k < 0 or i < 0:
        raise PreconditionError("indices must be nonnegative")
    m = i + k + 1
    lag_norms = np.empty(sample_count)
    base_norms = np.empty(sample_count)
    for s in range(sample_count):
        forest = sample_spine_forest(dist, T_INF_STAR, m, rng)
        if forest.exploration_length < m:
            raise PreconditionError("exploration shorter than requested; regenerate with larger m")
        bw = assign_positions(forest, theta, rng)
        pos = bw.positions.astype(float)
        lag_norms[s] = np.linalg.norm(pos[i + k] - pos[i])
        base_norms[s] = np.linalg.norm(pos[k])
    return lag_norms, base_norms


# ---------------------------------------------------------------------------
# binary export
# ---------------------------------------------------------------------------

RANGE_MAGIC = b"RNGE"
RANGE_VERSION = 1


def export_range(rs: RangeSet, path: str) -> None:
    """Binary stream: magic, version/dim/count as u32, then i32 coordinates."""
    import struct

    with open(path, "wb") as fh:
        fh.write(RANGE_MAGIC)
        fh.write(struct.pack("<III", RANGE_VERSION, rs.sites.shape[1], rs.count))
        fh.write(rs.sites.astype("<i4").tobytes())


def import_range(path: str) -> RangeSet:
    import struct

    with open(path, "rb") as fh:
        if fh.read(4) != RANGE_MAGIC:
            raise ValueError(f"{path}: not a range file")
        version, dim, count = struct.unpack("<III", fh.read(12))
        if version != RANGE_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        sites = np.frombuffer(fh.read(), dtype="<i4").reshape(count, dim)
    return RangeSet.from_points(sites)


def export_snake(points: np.ndarray, path: str) -> None:
    """CSV t,x1..xd with t the contour-time fraction in [0, 1]."""
    m = len(points)
    dim = points.shape[1]
    t = np.arange(m) / max(m - 1, 1)
    header = "t," + ",".join(f"x{j + 1}" for j in range(dim))
    np.savetxt(path, np.column_stack([t, points]), delimiter=",", header=header, comments="")
