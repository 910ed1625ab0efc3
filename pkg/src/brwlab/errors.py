"""Exception types shared across the package."""


class BrwLabError(Exception):
    """Base class for all package errors."""


class UnsupportedDimensionError(BrwLabError, ValueError):
    """Requested lattice dimension is not one of 3, 4, 5."""


class OutOfTableError(BrwLabError, KeyError):
    """Exact Green evaluation requested beyond the near-field cutoff."""


class SingularityError(BrwLabError, ValueError):
    """Continuum Green function evaluated at the origin."""


class CodecError(BrwLabError, ValueError):
    """Malformed integer path: not a valid single-tree excursion."""


class AdmissibilityError(BrwLabError, ValueError):
    """Conditioned tree size n has probability zero under the offspring law."""


class SamplingBudgetError(BrwLabError, RuntimeError):
    """Rejection sampler exhausted its retry budget."""


class DegenerateTreeError(BrwLabError, ValueError):
    """Operation needs a tree with at least one edge."""


class SolverError(BrwLabError, RuntimeError):
    """Linear solve failed to reach the requested residual."""


class PreconditionError(BrwLabError, ValueError):
    """Operation called outside its documented domain."""


class CacheFormatError(BrwLabError, ValueError):
    """Green-table cache file is corrupt or fails its load-time invariants."""


class ConfigError(BrwLabError, ValueError):
    """Experiment configuration file could not be parsed or validated."""


class FitError(BrwLabError, ValueError):
    """Log-log fit input is degenerate (too few sizes or nonpositive means)."""
