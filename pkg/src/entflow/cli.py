"""Command line entry points.

    entflow run <config.json>        execute an experiment
    entflow validate <config.json>   check a config and show filled defaults
    entflow parse-data <path>        parse a sparse dataset and summarize it
    entflow figure <samples.csv> <out.svg> [--modes <modes.csv>]

Exit codes: 0 success, 1 sampler failures were recorded, 2 bad config or
input.  ENTFLOW_WORKERS sets the worker-process count for `run`.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import ConfigError, parse_config, serialize_config
from .data import SparseFormatError, load_sparse_dataset
from .figures import emit_scatter_figure
from .harness import run_experiment

EXIT_OK = 0
EXIT_SAMPLER_FAILURES = 1
EXIT_CONFIG_ERROR = 2


def _load_config(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG_ERROR) from None
    try:
        return parse_config(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG_ERROR) from None


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    for warning in cfg.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return run_experiment(cfg)


def cmd_validate(args) -> int:
    cfg = _load_config(args.config)
    for warning in cfg.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    sys.stdout.write(serialize_config(cfg))
    return EXIT_OK


def cmd_parse_data(args) -> int:
    try:
        ds = load_sparse_dataset(args.path)
    except (OSError, SparseFormatError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    labels = ds.labels
    ones = int(labels.sum()) if ds.n_rows else 0
    print(f"rows: {ds.n_rows}")
    print(f"max feature index: {ds.max_index}")
    print(f"label balance: {ds.n_rows - ones} zeros / {ones} ones")
    return EXIT_OK


def cmd_figure(args) -> int:
    try:
        samples = np.loadtxt(args.samples, delimiter=",", ndmin=2)
        modes = np.loadtxt(args.modes, delimiter=",", ndmin=2) if args.modes else None
        emit_scatter_figure(samples, modes, args.out)
    except (OSError, ValueError) as exc:
        print(f"figure error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="entflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="validate a config and print it with defaults filled")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)

    p_data = sub.add_parser("parse-data", help="parse a sparse index:value dataset")
    p_data.add_argument("path")
    p_data.set_defaults(func=cmd_parse_data)

    p_fig = sub.add_parser("figure", help="render a scatter SVG from a samples CSV")
    p_fig.add_argument("samples")
    p_fig.add_argument("out")
    p_fig.add_argument("--modes", default=None)
    p_fig.set_defaults(func=cmd_figure)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
