"""Command-line entry points: ``safegp run`` and ``safegp aggregate``.

Exit codes: 0 on success, 2 for configuration errors, 3 for I/O errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import aggregate_traces, load_config, run_experiment
from .errors import AggregationError, ConfigError


def build_parser():
    parser = argparse.ArgumentParser(
        prog="safegp",
        description=(
            "Safe GP bandit benchmark harness: run seeded experiments and "
            "aggregate their trace files."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a JSON config")
    run_p.add_argument("--config", required=True, help="config JSON path")
    run_p.add_argument(
        "--out", default=None,
        help="output directory (defaults to run.output_dir in the config)",
    )
    run_p.add_argument(
        "--seeds", type=int, default=None,
        help="override the number of seeds in the config",
    )
    run_p.add_argument(
        "--parallel", type=int, default=1,
        help="number of worker processes for independent (seed, algorithm) runs",
    )

    agg_p = sub.add_parser(
        "aggregate", help="summarize an existing trace directory"
    )
    agg_p.add_argument("--in", dest="in_dir", required=True,
                       help="directory holding trace CSV files")
    agg_p.add_argument("--out", required=True, help="summary JSON path")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            summary = run_experiment(
                cfg, out_dir=args.out, n_seeds=args.seeds,
                parallel=args.parallel,
            )
            out = Path(args.out if args.out is not None else cfg.output_dir)
            algos = ", ".join(sorted(summary["algorithms"]))
            print(f"wrote traces and summary under {out} ({algos})")
        else:
            summary = aggregate_traces(args.in_dir)
            out = Path(args.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(
                json.dumps(summary, sort_keys=True, indent=2) + "\n"
            )
            print(f"wrote {out}")
    except (ConfigError, AggregationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
