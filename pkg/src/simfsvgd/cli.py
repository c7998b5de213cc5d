"""Command line entry point: ``simfsvgd <subcommand> [options]``.

Subcommands
  score-bench | sinusoid1d | pendulum   run an experiment into ``--out``
  eval                                  score a saved ensemble on a dataset CSV
  export                                rebuild results CSVs from cell files
"""

import argparse
import json
import sys
from pathlib import Path

from .evaluation import export_curves
from .experiments import ConfigError, EXPERIMENTS, evaluate_checkpoint, load_config, run_experiment
from .simulators import Dataset


def _add_run_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", type=Path, help="JSON config file (fields override the defaults)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field; dotted keys reach nested fields; repeatable")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes for experiment cells")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="simfsvgd", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(sub, "score-bench", "score-estimator accuracy against analytic scores")
    _add_run_parser(sub, "sinusoid1d", "1-D sinusoid study with posterior dumps")
    _add_run_parser(sub, "pendulum", "pendulum NLL-versus-n study")
    ev = sub.add_parser("eval", help="evaluate a saved particle ensemble on a dataset CSV")
    ev.add_argument("checkpoint", type=Path)
    ev.add_argument("dataset", type=Path)
    ev.add_argument("--method", default="model")
    ev.add_argument("--out", type=Path, help="append the result row to this CSV (else print JSON)")
    ex = sub.add_parser("export", help="collect cell results of a study directory into results CSVs")
    ex.add_argument("run_dir", type=Path)
    ex.add_argument("--out", type=Path, help="destination CSV (default: <run_dir>/results.csv)")
    return parser


def _export(run_dir, out):
    cells = sorted((run_dir / "cells").glob("*.json"))
    if not cells:
        raise ConfigError(f"{run_dir}: no cell files found under cells/")
    rows = [json.loads(p.read_text()) for p in cells]
    return export_curves(rows, out or run_dir / "results.csv")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command in EXPERIMENTS:
            if args.jobs < 1:
                raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
            cfg = load_config(args.command, args.config, args.overrides, args.seed)
            if args.print_config:
                print(json.dumps(cfg, indent=2, sort_keys=True))
                return 0
            path = run_experiment(cfg, args.out, args.jobs)
            print(f"wrote {path if isinstance(path, Path) else args.out}")
        elif args.command == "eval":
            row = evaluate_checkpoint(args.checkpoint, Dataset.load(args.dataset), args.method)
            if args.out:
                export_curves([row], args.out)
                print(f"wrote {args.out}")
            else:
                print(json.dumps(row, sort_keys=True))
        elif args.command == "export":
            print(f"wrote {_export(args.run_dir, args.out)}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"simfsvgd: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
