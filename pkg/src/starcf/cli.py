"""Command-line entry point for the analysis and optimization runs.

Subcommands: ``validate`` compares the closed-form SINR against the
simulation engine, ``cdf`` and ``sweep`` run geometry-ensemble studies,
``optimize`` runs the paired max-min comparison, and ``lemmas`` samples
the Gaussian trace identities. Every run writes versioned CSV or JSON
files under ``--out`` and prints the emitted paths.
"""

import argparse
import json
import sys
from dataclasses import replace

from .experiments import (
    ExperimentSpec, read_csv, run_cdf, run_lemmas,
    run_optimizer_experiment, run_sweep, run_validate,
)
from .scenario import SystemConfig, load_config


def _parse_slots(text):
    return tuple(int(part) for part in text.split(",") if part)


def _parse_grid(text):
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(int(part))
        except ValueError:
            values.append(float(part))
    return tuple(values)


def _add_common(parser, draws_default, draws_help):
    parser.add_argument("--config", help="path to a key = value system file")
    parser.add_argument("--seed", type=int,
                        help="override the configured seed")
    parser.add_argument("--trials", type=int, default=10_000,
                        help="simulation trials where sampling is involved")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent draws")
    parser.add_argument("--out", default="out",
                        help="directory receiving the output files")
    parser.add_argument("--name",
                        help="output file stem (default: the subcommand)")
    parser.add_argument("--draws", type=int, default=draws_default,
                        help=draws_help)
    parser.add_argument("--figures", action="store_true",
                        help="render PNG figures beside the data files")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="starcf",
        description=(
            "Spectral-efficiency analysis and max-min optimization for "
            "STAR-RIS assisted cell-free massive MIMO"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "validate", help="closed-form SINR groups against simulation")
    _add_common(p, 1, "unused by validate (single geometry draw)")
    p.add_argument("--slots", help="comma-separated channel uses to check")
    p.add_argument("--dump-stats", action="store_true",
                   help="also write every estimator mean and standard error")

    p = sub.add_parser("cdf", help="SE distribution over random geometries")
    _add_common(p, 100, "geometry draws forming the distribution")
    p.add_argument("--metric", choices=("sum", "min"), default="sum",
                   help="per-draw aggregate of the user SEs")
    p.add_argument("--surface", choices=("random", "equal"),
                   default="random", help="baseline surface configuration")

    p = sub.add_parser("sweep", help="mean SE against one swept variable")
    _add_common(p, 50, "geometry draws per grid point")
    p.add_argument("--variable", required=True,
                   help="configuration field to sweep (K splits both sides)")
    p.add_argument("--grid", required=True,
                   help="comma-separated values the variable takes")
    p.add_argument("--surface", choices=("random", "equal"),
                   default="random", help="baseline surface configuration")

    p = sub.add_parser(
        "optimize", help="paired max-min optimizer versus EPC plus RBF")
    _add_common(p, 50, "optimizer seeds (one geometry each)")
    p.add_argument("--swarm-size", type=int, default=10)
    p.add_argument("--swarm-iterations", type=int, default=100)
    p.add_argument("--eps-ao", type=float, default=0.01,
                   help="outer-loop stop tolerance")
    p.add_argument("--eps-bi", type=float, default=0.01,
                   help="bisection interval tolerance")
    p.add_argument("--max-outer", type=int, default=8,
                   help="outer iteration cap")

    p = sub.add_parser("lemmas", help="sampled Gaussian trace identities")
    _add_common(p, 1, "unused by lemmas")
    p.add_argument("--dim", type=int, default=4,
                   help="matrix dimension for the random instances")
    return parser


def _spec_from(args):
    config = load_config(args.config) if args.config else SystemConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return ExperimentSpec(
        name=args.name or args.command,
        config=config.validate(),
        draws=args.draws,
        trials=args.trials,
        out_dir=args.out,
        threads=args.threads,
    )


def _render(kind, path, out):
    from . import figures
    renderer = {
        "validate": figures.render_validate,
        "cdf": figures.render_cdf,
        "sweep": figures.render_sweep,
        "optimize": figures.render_optimizer,
        "lemmas": None,
    }[kind]
    if renderer is None:
        return
    print(f"figure {renderer(path)}", file=out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = sys.stdout
    spec = _spec_from(args)

    if args.command == "validate":
        slots = _parse_slots(args.slots) if args.slots else None
        path = run_validate(spec, ts=slots, dump_stats=args.dump_stats)
        _, _, rows = read_csv(path)
        worst = max(abs(row[5]) for row in rows if row[2] == "sinr")
        print(f"wrote {path}", file=out)
        print(f"worst SINR relative deviation {worst:.6g} "
              f"at {spec.trials} trials", file=out)
    elif args.command == "cdf":
        spec.metric = args.metric
        spec.surface = args.surface
        path = run_cdf(spec)
        print(f"wrote {path}", file=out)
    elif args.command == "sweep":
        spec.variable = args.variable
        spec.grid = _parse_grid(args.grid)
        spec.surface = args.surface
        path = run_sweep(spec)
        print(f"wrote {path}", file=out)
    elif args.command == "optimize":
        path = run_optimizer_experiment(
            spec, swarm_size=args.swarm_size,
            swarm_iterations=args.swarm_iterations, eps_ao=args.eps_ao,
            eps_bi=args.eps_bi, max_outer=args.max_outer,
        )
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        for run in payload["runs"]:
            print(json.dumps({"seed": run["seed"], "trace": run["trace"]}),
                  file=out)
        fraction = payload["summary"]["improved_fraction"]
        print(f"wrote {path}", file=out)
        print(f"improved on {fraction:.0%} of {spec.draws} paired seeds",
              file=out)
    elif args.command == "lemmas":
        path = run_lemmas(spec, dim=args.dim)
        print(f"wrote {path}", file=out)

    if args.figures:
        _render(args.command, path, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
