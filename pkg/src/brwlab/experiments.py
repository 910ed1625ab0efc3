"""Seeded, parallel, resumable experiment runner with CSV persistence.

Replica work units get their seeds from a SeedSequence keyed by
(experiment, dim, n, lambda, replica), so a rerun with the same
configuration reproduces every random draw regardless of worker count or
scheduling; rows are emitted in sorted key order and the CSV is rewritten
atomically, which makes output files byte-identical across reruns and lets
interrupted runs resume by skipping keys already on disk.
"""

from __future__ import annotations

import math
import os
import tempfile
import time
from dataclasses import dataclass, fields

import numpy as np

from .capacity import cap_exact, cap_farpoint, cap_mc_escape
from .errors import ConfigError, FitError
from .green import build_green_table, green_exact, g_continuum, harmonicity_residual
from .intersection import probe_escape_sup
from .newtonian import PointCloud, ball_capacity, cap_newtonian
from .trees import offspring_preset, sample_conditioned_tree
from .walks import assign_positions, step_preset, walk_range

EXPERIMENT_IDS = {"scaling": 1, "cardinality": 2, "theorem1": 3, "intersection": 4, "cap": 5}

CSV_HEADER = (
    "experiment,dim,n,lambda,replica,range_count,"
    "cap_exact,cap_mc,cap_farpoint,cap_continuum,max_escape,wall_seconds"
)

EXIT_OK = 0
EXIT_OPERATIONAL = 1
EXIT_CHECK_FAILED = 2


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    dim: int = 3
    offspring: str = "geometric_half"
    theta: str = "srw"
    n_list: tuple = (1024, 4096, 16384, 65536)
    lambda_list: tuple = ()
    replicas: int = 10
    mc_reps: int = 10_000
    probe_count: int = 64
    eps: float = 0.05
    newton_reps: int = 4000
    kill_factor: float = 8.0
    seed: int = 1
    workers: int = 1
    out_path: str = "results.csv"


_INT_KEYS = {"dim", "replicas", "mc_reps", "probe_count", "newton_reps", "seed", "workers"}
_FLOAT_KEYS = {"eps", "kill_factor"}
_LIST_INT_KEYS = {"n_list"}
_LIST_FLOAT_KEYS = {"lambda_list"}
_KEY_ALIASES = {"out": "out_path", "lambdas": "lambda_list", "n": "n_list"}


def parse_config(path: str) -> dict:
    """Flat key = value file with '#' comments; returns raw override mapping."""
    overrides: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, _, value = line.partition("=")
            key = _KEY_ALIASES.get(key.strip(), key.strip())
            value = value.strip()
            try:
                overrides[key] = _coerce(key, value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return overrides


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _LIST_INT_KEYS:
        return tuple(int(tok) for tok in value.split(",") if tok.strip())
    if key in _LIST_FLOAT_KEYS:
        return tuple(float(tok) for tok in value.split(",") if tok.strip())
    return value


def make_config(file_path: str | None = None, **overrides) -> ExperimentConfig:
    raw: dict = {}
    if file_path:
        raw.update(parse_config(file_path))
    raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    if "experiment" not in raw:
        raise ConfigError("configuration must name an experiment")
    cfg = ExperimentConfig(**raw)
    if cfg.experiment not in EXPERIMENT_IDS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    if cfg.dim not in (3, 4, 5):
        raise ConfigError(f"dim must be 3, 4, or 5, got {cfg.dim}")
    dist = offspring_preset(cfg.offspring)
    for n in cfg.n_list:
        if not dist.admissible(n):
            raise ConfigError(f"size {n} is inadmissible for offspring preset {cfg.offspring}")
    return cfg


def replica_seed(cfg: ExperimentConfig, n: int, lam: float, replica: int) -> np.random.SeedSequence:
    lam_key = int(round(lam * 1e9))
    return np.random.SeedSequence(
        entropy=cfg.seed,
        spawn_key=(EXPERIMENT_IDS[cfg.experiment], cfg.dim, n, lam_key, replica),
    )


# ---------------------------------------------------------------------------
# rows
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def row_to_csv(row: dict) -> str:
    return ",".join(
        _fmt(row.get(k, ""))
        for k in (
            "experiment", "dim", "n", "lambda", "replica", "range_count",
            "cap_exact", "cap_mc", "cap_farpoint", "cap_continuum",
            "max_escape", "wall_seconds",
        )
    )


def _row_key(row: dict):
    lam = row.get("lambda", "")
    return (int(row["n"]), float(lam) if lam != "" else -1.0, int(row["replica"]))


def read_rows(path: str) -> list[dict]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        names = header.split(",")
        for line in fh:
            vals = line.rstrip("\n").split(",")
            rows.append(dict(zip(names, vals)))
    return rows


def write_rows(path: str, rows: list[dict]) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    rows = sorted(rows, key=_row_key)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".csv.tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for row in rows:
                fh.write(row_to_csv(row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# work units
# ---------------------------------------------------------------------------

_TABLE_CACHE: dict = {}


def _green_table(dim: int):
    if dim not in _TABLE_CACHE:
        _TABLE_CACHE[dim] = build_green_table(dim)
    return _TABLE_CACHE[dim]


def _worker_init(num_threads: int) -> None:
    import numba

    numba.set_num_threads(num_threads)


def _run_task(task) -> dict:
    cfg_dict, n, lam, replica = task
    cfg = ExperimentConfig(**cfg_dict)
    rng = np.random.default_rng(replica_seed(cfg, n, float(lam) if lam != "" else 0.0, replica))
    dist = offspring_preset(cfg.offspring)
    theta = step_preset(cfg.theta, cfg.dim)
    t0 = time.perf_counter()
    row = {
        "experiment": cfg.experiment,
        "dim": cfg.dim,
        "n": n,
        "lambda": lam if cfg.experiment == "intersection" else "",
        "replica": replica,
    }
    tree = sample_conditioned_tree(dist, n, rng)
    bw = assign_positions(tree, theta, rng)
    rs = walk_range(bw)
    row["range_count"] = rs.count
    if cfg.experiment == "scaling":
        row["cap_exact"] = cap_exact(rs, _green_table(cfg.dim)).capacity
    elif cfg.experiment == "theorem1":
        table = _green_table(cfg.dim)
        row["cap_exact"] = cap_exact(rs, table).capacity
        cloud = PointCloud.from_points(rs.sites.astype(float) * n ** -0.25, cfg.eps)
        row["cap_continuum"] = cap_newtonian(cloud, cfg.newton_reps, rng).value
    elif cfg.experiment == "intersection":
        report = probe_escape_sup(
            bw, lam, cfg.probe_count, cfg.mc_reps, rng, kill_factor=cfg.kill_factor
        )
        row["max_escape"] = report.max_escape
    elif cfg.experiment == "cap":
        table = _green_table(cfg.dim)
        row["cap_exact"] = cap_exact(rs, table).capacity
        row["cap_mc"] = cap_mc_escape(rs, table, cfg.mc_reps, rng).value
        far = rs.sites[int(np.argmax((rs.sites.astype(np.int64) ** 2).sum(axis=1)))]
        x_far = (far.astype(float) * (3.0 * max(rs.max_norm, 1.0) / max(np.linalg.norm(far), 1.0)))
        x_far = np.rint(x_far).astype(np.int64)
        if np.linalg.norm(x_far) < 2 * rs.max_norm:
            x_far = np.zeros(cfg.dim, dtype=np.int64)
            x_far[0] = int(2 * rs.max_norm) + 1
        row["cap_farpoint"] = cap_farpoint(rs, table, x_far, cfg.mc_reps, rng).value
    # wall_seconds is intentionally left empty in the CSV: rerun byte-identity
    # is part of the output contract, and elapsed time is not reproducible.
    row["wall_seconds"] = ""
    row["_elapsed"] = time.perf_counter() - t0
    return row


def _task_list(cfg: ExperimentConfig):
    lams = cfg.lambda_list if cfg.experiment == "intersection" else ("",)
    cfg_dict = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    return [
        (cfg_dict, n, lam, rep)
        for n in cfg.n_list
        for lam in lams
        for rep in range(cfg.replicas)
    ]


def run(cfg: ExperimentConfig, log=print) -> int:
    """Execute an experiment config; returns the process exit code."""
    if cfg.experiment == "intersection" and not cfg.lambda_list:
        raise ConfigError("intersection experiment needs a lambda_list")
    existing: list[dict] = []
    done_keys: set = set()
    if os.path.exists(cfg.out_path):
        existing = [r for r in read_rows(cfg.out_path) if r.get("experiment") == cfg.experiment]
        done_keys = {
            (r["experiment"], int(r["n"]), r["lambda"], int(r["replica"])) for r in existing
        }
        if done_keys:
            log(f"resuming: {len(done_keys)} rows already in {cfg.out_path}")

    tasks = [
        t for t in _task_list(cfg)
        if (cfg.experiment, t[1], _fmt(t[2]), t[3]) not in done_keys
    ]
    t_start = time.perf_counter()
    new_rows: list[dict] = []

    def strip(rows):
        return [{k: v for k, v in r.items() if not k.startswith("_")} for r in rows]

    def note(row):
        log(f"  done n={row['n']} lambda={row['lambda'] or '-'} replica={row['replica']} "
            f"({row.pop('_elapsed'):.1f}s)")

    flush_every = 20
    try:
        if tasks and cfg.workers > 1:
            import multiprocessing as mp

            threads_each = max(1, (os.cpu_count() or 1) // cfg.workers)
            ctx = mp.get_context("spawn")
            with ctx.Pool(cfg.workers, initializer=_worker_init, initargs=(threads_each,)) as pool:
                for row in pool.imap_unordered(_run_task, tasks, chunksize=1):
                    new_rows.append(row)
                    note(row)
                    if len(new_rows) % flush_every == 0:
                        write_rows(cfg.out_path, existing + strip(new_rows))
        elif tasks:
            for task in tasks:
                row = _run_task(task)
                new_rows.append(row)
                note(row)
                if len(new_rows) % flush_every == 0:
                    write_rows(cfg.out_path, existing + strip(new_rows))
    finally:
        # interrupted runs keep their completed rows; a rerun resumes from them
        all_rows = existing + strip(new_rows)
        write_rows(cfg.out_path, all_rows)
    log(f"wrote {len(all_rows)} rows to {cfg.out_path} "
        f"({time.perf_counter() - t_start:.1f}s this run)")
    if cfg.replicas == 0 or not all_rows:
        return EXIT_OK
    ok = summarize(cfg, all_rows, log=log)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# fits and summary checks
# ---------------------------------------------------------------------------


def fit_exponent(rows, x_field: str = "n", y_field: str = "cap_exact"):
    """OLS of log(mean y per x) on log x; needs >= 3 sizes with positive means."""
    groups: dict = {}
    for row in rows:
        y = row.get(y_field, "")
        if y in ("", None):
            continue
        groups.setdefault(float(row[x_field]), []).append(float(y))
    xs = sorted(groups)
    means = np.array([np.mean(groups[x]) for x in xs])
    xs = np.array(xs)
    if len(xs) < 3:
        raise FitError(f"need at least 3 distinct {x_field} values, got {len(xs)}")
    if (means <= 0).any():
        raise FitError("nonpositive group means cannot be log-fitted")
    lx, ly = np.log(xs), np.log(means)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r_sq = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r_sq


def _col(rows, field, n=None, lam=None):
    out = []
    for r in rows:
        if n is not None and int(r["n"]) != n:
            continue
        if lam is not None and f"{float(r['lambda']):.6g}" != f"{lam:.6g}":
            continue
        val = r.get(field, "")
        if val not in ("", None):
            out.append(float(val))
    return np.array(out)


def summarize(cfg: ExperimentConfig, rows, log=print) -> bool:
    """Experiment-specific checks; prints one pass/fail line per check."""
    ok = True

    def check(name, passed, detail):
        nonlocal ok
        ok = ok and passed
        log(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")

    if cfg.experiment == "scaling":
        try:
            slope, _, r_sq = fit_exponent(rows, "n", "cap_exact")
        except FitError as exc:
            log(f"[SKIP] capacity exponent d={cfg.dim}: {exc}")
            return ok
        target = (cfg.dim - 2) / 4.0
        check(
            f"capacity exponent d={cfg.dim}",
            abs(slope - target) <= 0.08,
            f"slope {slope:.4f} vs target {target:.2f} +/- 0.08 (r^2 = {r_sq:.4f})",
        )
    elif cfg.experiment == "cardinality":
        ns = sorted({int(r["n"]) for r in rows})
        if cfg.dim == 3:
            try:
                slope, _, r_sq = fit_exponent(rows, "n", "range_count")
            except FitError as exc:
                log(f"[SKIP] range-size exponent d=3: {exc}")
                return ok
            check(
                "range-size exponent d=3",
                0.70 <= slope <= 0.80,
                f"slope {slope:.4f} in [0.70, 0.80] (r^2 = {r_sq:.4f})",
            )
        elif cfg.dim == 4:
            lo, hi = min(ns), max(ns)
            a = _col(rows, "range_count", n=lo).mean() * math.log(lo) / lo
            b = _col(rows, "range_count", n=hi).mean() * math.log(hi) / hi
            drift = abs(b - a) / a
            check(
                "corrected range density d=4",
                drift < 0.20,
                f"(log n / n) #R drift {drift:.3f} between n={lo} and n={hi} (< 0.20)",
            )
        else:
            lo, hi = min(ns), max(ns)
            a = _col(rows, "range_count", n=lo).mean() / lo
            b = _col(rows, "range_count", n=hi).mean() / hi
            drift = abs(b - a) / a
            check(
                "range density d=5",
                drift < 0.15,
                f"#R/n drift {drift:.3f} between n={lo} and n={hi} (< 0.15)",
            )
    elif cfg.experiment == "theorem1":
        d = cfg.dim
        for n in sorted({int(r["n"]) for r in rows}):
            lhs = _col(rows, "cap_exact", n=n) * n ** (-(d - 2) / 4.0)
            rhs = _col(rows, "cap_continuum", n=n) / d
            ratio = float((lhs / rhs).mean())
            check(
                f"rescaled capacity ratio n={n}",
                0.75 <= ratio <= 1.30,
                f"mean ratio {ratio:.4f} in [0.75, 1.30] over {len(lhs)} replicas",
            )
    elif cfg.experiment == "intersection":
        lams = sorted({float(r["lambda"]) for r in rows}, reverse=True)
        for n in sorted({int(r["n"]) for r in rows}):
            means, errs = [], []
            for lam in lams:
                vals = _col(rows, "max_escape", n=n, lam=lam)
                if len(vals) == 0:
                    continue
                means.append(vals.mean())
                errs.append(vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0)
            inversions = sum(
                1
                for i in range(len(means) - 1)
                if means[i + 1] > means[i] + 2.0 * math.hypot(errs[i], errs[i + 1])
            )
            check(
                f"escape trend in lambda (n={n})",
                inversions == 0 and _soft_monotone(means, errs),
                f"means {['%.4f' % m for m in means]} along decreasing lambda, "
                f"{inversions} hard inversions",
            )
    return ok


def _soft_monotone(means, errs) -> bool:
    """Nonincreasing sequence allowing at most one inversion within 2 stderr."""
    soft = 0
    for i in range(len(means) - 1):
        if means[i + 1] > means[i]:
            if means[i + 1] > means[i] + 2.0 * math.hypot(errs[i], errs[i + 1]):
                return False
            soft += 1
    return soft <= 1


# ---------------------------------------------------------------------------
# calibration battery
# ---------------------------------------------------------------------------


def calibrate(log=print, cache_dir: str | None = None, dims=(3, 4, 5)) -> bool:
    """Fast invariant battery; one PASS/FAIL row each, True iff all pass."""
    from scipy import stats

    from .trees import LukasiewiczPath, decode, encode, offspring_preset

    ok = True

    def check(name, passed, detail):
        nonlocal ok
        ok = ok and passed
        log(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")

    g30 = green_exact(3, (0, 0, 0))
    check("origin Green value d=3", 1.5163 <= g30 <= 1.5165, f"G(0) = {g30:.10f}")
    ge = green_exact(3, (1, 0, 0))
    check("origin harmonicity d=3", abs(ge - (g30 - 1.0)) <= 1e-8, f"G(e1) = {ge:.10f}")
    for d in dims:
        try:
            table = build_green_table(d, cache_dir=cache_dir)
        except Exception as exc:  # noqa: BLE001 - report as a failing row
            check(f"green table d={d}", False, f"build/load failed: {exc}")
            continue
        resid = harmonicity_residual(table.dense(), d)
        check(
            f"table harmonicity d={d}",
            resid <= 10 * table.quadrature_tol,
            f"residual {resid:.2e} <= {10 * table.quadrature_tol:.0e}",
        )
        x50 = (50,) + (0,) * (d - 1)
        ratio = green_exact(d, x50) / g_continuum(d, x50)
        check(
            f"lattice/continuum factor d={d}",
            abs(ratio - d) <= 0.02 * d,
            f"G/g = {ratio:.4f} vs {d} +/- 2%",
        )
        ev = cap_exact(np.zeros((1, d), dtype=np.int32), table)
        want = 1.0 / table.origin()
        check(
            f"single-site capacity d={d}",
            abs(ev.capacity - want) <= 1e-8,
            f"cap = {ev.capacity:.10f} vs 1/G(0) = {want:.10f}",
        )
    rng = np.random.default_rng(20260808)
    cloud = PointCloud.from_points(np.zeros((1, 3)), eps=1.0)
    est = cap_newtonian(cloud, 20_000, rng, r=4.0)
    want = ball_capacity(3, 1.0)
    check(
        "unit-ball Newtonian capacity d=3",
        abs(est.value - want) <= 3 * est.stderr,
        f"{est.value:.3f} vs {want:.3f} +/- {3 * est.stderr:.3f}",
    )
    dist = offspring_preset("geometric_half")
    counts = {}
    for _ in range(10_000):
        tree = sample_conditioned_tree(dist, 4, rng)
        counts[tuple(tree.children_counts)] = counts.get(tuple(tree.children_counts), 0) + 1
    freq = np.array(sorted(counts.values(), reverse=True))
    chi = stats.chisquare(freq, f_exp=np.full(5, 10_000 / 5)) if len(freq) == 5 else None
    check(
        "uniform conditioned law at n=4",
        chi is not None and chi.pvalue > 0.001,
        f"{len(freq)} shapes, chi-square p = {chi.pvalue if chi else 0:.4f}",
    )
    t = decode(LukasiewiczPath(steps=np.array([1, -1, -1])))
    check(
        "codec round trip",
        np.array_equal(encode(t).steps, [1, -1, -1]),
        "3-step excursion decodes and re-encodes",
    )
    return ok
