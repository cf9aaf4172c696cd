"""Command-line interface: ``phidiv fit | deff | simulate``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (including fits that did not converge).
"""
from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction

from .errors import ConfigError, PhidivError
from .model import read_survey_csv
from .report import (
    build_deff_report, build_fit_report, render_deff_csv, render_deff_human,
    render_fit_csv, render_fit_human,
)
from .simulation import bundled_config, emit_results, load_config, run_scenario

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_lambdas(text):
    """Comma-separated lambdas; fractions such as 2/3 are parsed exactly."""
    try:
        values = [float(Fraction(part.strip())) for part in text.split(",") if part.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"bad --lambda value {text!r}") from exc
    if not values:
        raise UsageError("--lambda needs at least one value")
    return values


def resolve_data(path):
    """A file on disk, or the name of a bundled fixture such as ``unc.csv``."""
    if os.path.exists(path):
        return path
    name = path if path.endswith(".csv") else path + ".csv"
    bundled = os.path.join(DATA_DIR, os.path.basename(name))
    if os.path.exists(bundled):
        return bundled
    raise ConfigError(f"data file not found: {path}")


def resolve_config(path):
    if os.path.exists(path):
        return load_config(path)
    name = os.path.splitext(os.path.basename(path))[0]
    return bundled_config(name)


def _write(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if text and not text.endswith("\n"):
            sys.stdout.write("\n")


def cmd_fit(args):
    data = read_survey_csv(resolve_data(args.data))
    reports = [build_fit_report(data, lam) for lam in parse_lambdas(args.lambdas)]
    render = render_fit_csv if args.format == "csv" else render_fit_human
    _write(render(reports), args.out)
    if not all(r.converged for r in reports):
        print("error: at least one fit did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_deff(args):
    data = read_survey_csv(resolve_data(args.data))
    reports = [build_deff_report(data, lam) for lam in parse_lambdas(args.lambdas)]
    render = render_deff_csv if args.format == "csv" else render_deff_human
    _write(render(reports), args.out)
    return EXIT_OK if all(r.converged for r in reports) else EXIT_NUMERIC


def cmd_simulate(args):
    config = resolve_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if overrides:
        config = config.with_overrides(**overrides)
    records = run_scenario(config, workers=args.workers)
    out = args.out or f"{config.name}_results.csv"
    emit_results(records, out)
    failures = sum(r.failures for r in records)
    fits = sum(r.failures + r.replicates_used for r in records)
    print(f"wrote {len(records)} rows to {out} (seed {config.seed})")
    print(f"failed fits: {failures} of {fits}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="phidiv", description=(
        "Pseudo minimum phi-divergence multinomial logistic regression for "
        "cluster survey data."))
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in (("fit", "fit the model for one or more lambdas"),
                           ("deff", "design effect and intra-cluster correlation report")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True,
                       help="cluster- or individual-level CSV (or a bundled name such as unc.csv)")
        p.add_argument("--lambda", dest="lambdas", default="0",
                       help="comma-separated Cressie-Read indices, e.g. 0,2/3,1")
        p.add_argument("--format", choices=("human", "csv"), default="human")
        p.add_argument("--out", help="write the report here instead of stdout")

    p = sub.add_parser("simulate", help="run a simulation scenario")
    p.add_argument("--config", required=True,
                   help="scenario config file (or a bundled name such as scenario1)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--replicates", type=int, help="override the replicate count")
    p.add_argument("--workers", type=int, help="worker processes (capped by PHIDIV_THREADS)")
    p.add_argument("--out", help="results CSV path (default <config name>_results.csv)")
    return parser


COMMANDS = {"fit": cmd_fit, "deff": cmd_deff, "simulate": cmd_simulate}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PhidivError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
