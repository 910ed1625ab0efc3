"""Command-line entry point.

Exit codes: 0 all enabled checks pass, 2 a check failed, 1 operational error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import BrwLabError
from .experiments import (
    EXIT_CHECK_FAILED,
    EXIT_OK,
    EXIT_OPERATIONAL,
    calibrate,
    make_config,
    run,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--seed", type=int, help="root seed (64-bit)")
    p.add_argument("--dim", type=int, choices=(3, 4, 5))
    p.add_argument("--out", dest="out_path", help="output CSV path")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--offspring", help="offspring preset name")
    p.add_argument("--theta", help="step preset name")
    p.add_argument("--replicas", type=int)
    p.add_argument("--n-list", help="comma-separated tree sizes")
    p.add_argument("--lambda-list", help="comma-separated lambda grid")
    p.add_argument("--mc-reps", dest="mc_reps", type=int)
    p.add_argument("--probe-count", dest="probe_count", type=int)
    p.add_argument("--newton-reps", dest="newton_reps", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--kill-factor", dest="kill_factor", type=float)


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for key in (
        "seed", "dim", "out_path", "workers", "offspring", "theta", "replicas",
        "mc_reps", "probe_count", "newton_reps", "eps", "kill_factor",
    ):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    if getattr(args, "n_list", None):
        out["n_list"] = tuple(int(t) for t in args.n_list.split(","))
    if getattr(args, "lambda_list", None):
        out["lambda_list"] = tuple(float(t) for t in args.lambda_list.split(","))
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="brwlab",
        description="critical branching random walk simulation and capacity lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("scaling", "capacity scaling exponent experiment"),
        ("cardinality", "range-size law experiment"),
        ("theorem1", "rescaled capacity vs Newtonian capacity consistency"),
        ("intersection", "escape-probability trend curves"),
        ("cap", "three-way capacity cross-validation on sampled ranges"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)

    p = sub.add_parser("calibrate", help="fast invariant battery")
    p.add_argument("--dim", type=int, choices=(3, 4, 5, 6))
    p.add_argument("--cache-dir")

    p = sub.add_parser("sample-tree", help="sample one conditioned tree to a text file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--offspring", default="geometric_half")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample-brw", help="sample one branching walk; export range and snake")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, choices=(3, 4, 5), default=3)
    p.add_argument("--offspring", default="geometric_half")
    p.add_argument("--theta", default="srw")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True, help="range file path; snake goes to <out>.snake.csv")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except BrwLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "calibrate":
        if args.dim is not None and args.dim not in (3, 4, 5):
            print(f"error: unsupported dimension {args.dim}", file=sys.stderr)
            return EXIT_OPERATIONAL
        dims = (args.dim,) if args.dim else (3, 4, 5)
        ok = calibrate(cache_dir=args.cache_dir, dims=dims)
        return EXIT_OK if ok else EXIT_CHECK_FAILED

    if args.command == "sample-tree":
        from .trees import export_tree, offspring_preset, sample_conditioned_tree

        rng = np.random.default_rng(args.seed)
        tree = sample_conditioned_tree(offspring_preset(args.offspring), args.n, rng)
        export_tree(tree, args.out)
        print(f"tree with {tree.size} vertices, height {int(tree.depth.max())} -> {args.out}")
        return EXIT_OK

    if args.command == "sample-brw":
        from .trees import offspring_preset, sample_conditioned_tree
        from .walks import assign_positions, export_range, export_snake, rescaled_snake, step_preset, walk_range

        rng = np.random.default_rng(args.seed)
        tree = sample_conditioned_tree(offspring_preset(args.offspring), args.n, rng)
        bw = assign_positions(tree, step_preset(args.theta, args.dim), rng)
        rs = walk_range(bw)
        export_range(rs, args.out)
        if args.n >= 2:
            export_snake(rescaled_snake(bw), args.out + ".snake.csv")
        print(f"range: {rs.count} sites, max norm {rs.max_norm:.1f} -> {args.out}")
        return EXIT_OK

    cfg = make_config(args.config, experiment=args.command, **_overrides(args))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
