#!/usr/bin/env python3
"""Offline figure renderer for brwlab experiment CSVs.

Reads only the documented CSV schema (header row:
experiment,dim,n,lambda,replica,range_count,cap_exact,cap_mc,cap_farpoint,
cap_continuum,max_escape,wall_seconds) and renders one of three figures:

  scaling     log-log means of cap_exact vs n with an independently refitted
              slope annotated to 3 decimals
  ratio_hist  histogram of per-replica ratios
              n^(-(d-2)/4) cap_exact / ((1/d) cap_continuum)
  heatmap     mean max_escape over the (n, lambda) grid

The script deliberately does not import the simulation package: it is a
read-only consumer of the CSV contract, and the slope fit here is its own
ordinary-least-squares implementation so figure annotations cross-check the
producer rather than echo it.

Usage: plots/render.py --in results.csv --kind scaling --out fig.png
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

EXPECTED_COLUMNS = [
    "experiment", "dim", "n", "lambda", "replica", "range_count",
    "cap_exact", "cap_mc", "cap_farpoint", "cap_continuum",
    "max_escape", "wall_seconds",
]

KINDS = ("scaling", "ratio_hist", "heatmap")


class SchemaError(ValueError):
    pass


@dataclass
class FigureSpec:
    csv_path: str
    kind: str
    out_path: str
    annotated_slope: float | None = None  # filled by render() for scaling figures


def read_csv(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in EXPECTED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(
                f"{path}: missing columns {missing}; expected header {EXPECTED_COLUMNS}"
            )
        return list(reader)


def ols_loglog(ns: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    """Plain least squares of log y on log n (slope, intercept)."""
    lx, ly = np.log(ns), np.log(ys)
    n = len(lx)
    sx, sy = lx.sum(), ly.sum()
    sxx, sxy = (lx * lx).sum(), (lx * ly).sum()
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    intercept = (sy - slope * sx) / n
    return float(slope), float(intercept)


def group_means(rows: list[dict], key_field: str, value_field: str) -> dict[float, float]:
    acc: dict[float, list[float]] = {}
    for row in rows:
        val = row.get(value_field, "")
        if val in ("", None):
            continue
        acc.setdefault(float(row[key_field]), []).append(float(val))
    return {k: float(np.mean(v)) for k, v in acc.items()}


def _new_figure():
    return plt.subplots(figsize=(6.4, 4.8), dpi=120)


def _empty_figure(spec: FigureSpec, note: str) -> None:
    fig, ax = _new_figure()
    ax.set_axis_off()
    ax.text(0.5, 0.5, "no data", ha="center", va="center", fontsize=28, alpha=0.35)
    ax.text(0.5, 0.35, note, ha="center", va="center", fontsize=9, alpha=0.6)
    _save(fig, spec.out_path)


def _save(fig, out_path: str) -> None:
    # empty metadata keeps the PNG byte-stable across renders
    fig.savefig(out_path, metadata={"Software": None})
    plt.close(fig)


def render_scaling(spec: FigureSpec, rows: list[dict]) -> None:
    means = group_means(rows, "n", "cap_exact")
    if len(means) < 3:
        _empty_figure(spec, f"{len(means)} sizes with capacity values (need 3)")
        return
    ns = np.array(sorted(means))
    ys = np.array([means[n] for n in ns])
    slope, intercept = ols_loglog(ns, ys)
    spec.annotated_slope = round(slope, 3)
    fig, ax = _new_figure()
    ax.loglog(ns, ys, "o", color="#1f77b4", label="mean capacity")
    grid = np.geomspace(ns[0], ns[-1], 64)
    ax.loglog(grid, np.exp(intercept) * grid**slope, "-", color="#d62728",
              label=f"fit: slope = {slope:.3f}")
    ax.set_xlabel("tree size n")
    ax.set_ylabel("mean exact capacity of the range")
    ax.set_title("capacity scaling")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, spec.out_path)


def render_ratio_hist(spec: FigureSpec, rows: list[dict]) -> None:
    ratios = []
    for row in rows:
        if row.get("cap_exact", "") in ("", None) or row.get("cap_continuum", "") in ("", None):
            continue
        d = int(row["dim"])
        n = float(row["n"])
        lhs = float(row["cap_exact"]) * n ** (-(d - 2) / 4.0)
        rhs = float(row["cap_continuum"]) / d
        ratios.append(lhs / rhs)
    if not ratios:
        _empty_figure(spec, "no rows with both capacity columns")
        return
    fig, ax = _new_figure()
    ax.hist(ratios, bins=max(5, int(math.sqrt(len(ratios)) * 2)), color="#1f77b4", alpha=0.8)
    mean = float(np.mean(ratios))
    ax.axvline(mean, color="#d62728", label=f"mean = {mean:.3f}")
    ax.axvline(1.0, color="black", linestyle=":", alpha=0.6, label="ratio 1")
    ax.set_xlabel("rescaled capacity ratio")
    ax.set_ylabel("replicas")
    ax.set_title("discrete vs continuum capacity ratio")
    ax.legend()
    _save(fig, spec.out_path)


def render_heatmap(spec: FigureSpec, rows: list[dict], self_check: bool = False) -> None:
    cells: dict[tuple[int, float], list[float]] = {}
    for row in rows:
        if row.get("max_escape", "") in ("", None) or row.get("lambda", "") in ("", None):
            continue
        key = (int(row["n"]), float(row["lambda"]))
        cells.setdefault(key, []).append(float(row["max_escape"]))
    if not cells:
        _empty_figure(spec, "no escape rows with lambda values")
        return
    ns = sorted({k[0] for k in cells})
    lams = sorted({k[1] for k in cells})
    grid = np.full((len(ns), len(lams)), np.nan)
    for (n, lam), vals in cells.items():
        grid[ns.index(n), lams.index(lam)] = float(np.mean(vals))
    if self_check:
        for i, n in enumerate(ns):
            vals = grid[i, :]
            finite = vals[~np.isnan(vals)]
            if not (np.diff(finite) >= -1e-12).all():
                raise SchemaError(
                    f"self-check failed: mean escape not monotone in lambda at n={n}: {vals}"
                )
    fig, ax = _new_figure()
    im = ax.imshow(grid, aspect="auto", origin="lower", cmap="viridis")
    ax.set_xticks(range(len(lams)), [f"{v:g}" for v in lams])
    ax.set_yticks(range(len(ns)), [str(n) for n in ns])
    ax.set_xlabel("lambda")
    ax.set_ylabel("tree size n")
    ax.set_title("mean max escape probability")
    fig.colorbar(im, ax=ax, label="mean max escape")
    _save(fig, spec.out_path)


def render(spec: FigureSpec, self_check: bool = False) -> FigureSpec:
    rows = read_csv(spec.csv_path)
    if spec.kind == "scaling":
        render_scaling(spec, rows)
    elif spec.kind == "ratio_hist":
        render_ratio_hist(spec, rows)
    elif spec.kind == "heatmap":
        render_heatmap(spec, rows, self_check=self_check)
    else:
        raise ValueError(f"unknown figure kind {spec.kind!r}; choose from {KINDS}")
    return spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--in", dest="csv_path", required=True, help="experiment CSV")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--out", dest="out_path", required=True, help="output image path")
    parser.add_argument("--self-check", action="store_true",
                        help="assert figure-level data properties before rendering")
    args = parser.parse_args(argv)
    spec = FigureSpec(csv_path=args.csv_path, kind=args.kind, out_path=args.out_path)
    try:
        render(spec, self_check=args.self_check)
    except (SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if spec.annotated_slope is not None:
        print(f"slope {spec.annotated_slope:.3f}")
    print(f"wrote {spec.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
