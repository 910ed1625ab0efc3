"""Critical branching random walk laboratory on Z^d (d = 3, 4, 5)."""

import os as _os

# workqueue is fork-safe; the default OpenMP layer deadlocks in forked workers
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from .capacity import (
    CapEstimate,
    EquilibriumVector,
    cap_exact,
    cap_farpoint,
    cap_mc_escape,
    escape_probability_mc,
)
from .green import (
    GreenTable,
    build_green_table,
    c1_constant,
    g_continuum,
    green,
    green_exact,
)
from .intersection import ProbeReport, intersection_curve, probe_escape_sup
from .newtonian import NewtonianEstimate, PointCloud, ball_capacity, cap_newtonian, theorem1_check
from .trees import (
    LukasiewiczPath,
    OffspringDistribution,
    PlaneTree,
    SpineForest,
    contour_walk,
    decode,
    encode,
    height_process,
    offspring_preset,
    sample_conditioned_tree,
    sample_spine_forest,
)
from .walks import (
    BranchingWalk,
    RangeSet,
    StepDistribution,
    assign_positions,
    rescaled_snake,
    stationarity_witness,
    step_preset,
    walk_range,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
