"""Command line entry point: ``dmpc-lab run | verify | emit-plots``.

Exit codes: 0 success, 1 unreadable/invalid input, 2 invariant violation or
failed certificate, 3 runtime infeasibility.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import scenario
from .design import certify
from .engine import CONTROLLERS, run, summarize
from .errors import (
    DmpcLabError,
    Infeasible,
    MalformedTrace,
    NoCommonStamp,
    ParseError,
    SchemaError,
    TubePreconditionViolated,
)
from .tracefile import emit_plot_data, write_trace

log = logging.getLogger("dmpc_lab")

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT, EXIT_INFEASIBLE = 0, 1, 2, 3


def _configure_logging(quiet: bool) -> None:
    level = os.environ.get("DMPC_LAB_LOG", "ERROR" if quiet else "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load(args):
    cfg = scenario.load(args.scenario)
    kw = {}
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        kw["T"] = args.steps
    if getattr(args, "controller", None) is not None:
        kw["controller"] = args.controller
    if getattr(args, "tau_bar", None) is not None:
        kw["delay"] = replace(cfg.delay, tau_bar=args.tau_bar)
    try:
        return cfg.with_overrides(**kw) if kw else cfg
    except (DmpcLabError, ValueError) as exc:
        raise SchemaError(f"invalid override: {exc}") from exc


def cmd_run(args) -> int:
    cfg = _load(args)
    code = EXIT_OK
    try:
        trace = run(cfg)
    except Infeasible as exc:
        trace, code = exc.trace, EXIT_INFEASIBLE
        log.error("%s", exc)
    except (NoCommonStamp, TubePreconditionViolated) as exc:
        trace, code = exc.trace, EXIT_INVARIANT
        log.error("%s", exc)
    if args.out:
        write_trace(trace, args.out)
    summary = summarize(trace, cfg.topology)
    if code == EXIT_OK and cfg.controller == "robust_dmpc" and not summary.ok:
        code = EXIT_INVARIANT
    if not args.quiet:
        print("\n".join(summary.lines()))
    return code


def cmd_verify(args) -> int:
    cfg = _load(args)
    cert = certify(cfg.model, cfg.topology, cfg.K, cfg.N, cfg.delay.tau_bar, cfg.eta)
    print("\n".join(cert.report_lines()))
    return EXIT_OK if cert.passed else EXIT_INVARIANT


def cmd_emit_plots(args) -> int:
    written = emit_plot_data(args.traces, args.out)
    if not args.quiet:
        for p in written:
            print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmpc-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario JSON (path, or ex1.json / ex2.json)")
        p.add_argument("--tau-bar", type=int, dest="tau_bar", help="override the delay bound")
        p.add_argument("--quiet", action="store_true")

    p_run = sub.add_parser("run", help="simulate a scenario and write a CSV trace")
    common(p_run)
    p_run.add_argument("--out", help="trace CSV path")
    p_run.add_argument("--seed", type=int, help="delay RNG seed")
    p_run.add_argument("--steps", type=int, help="number of steps T")
    p_run.add_argument("--controller", choices=CONTROLLERS)
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify", help="print the offline feasibility certificate")
    common(p_ver)
    p_ver.set_defaults(func=cmd_verify)

    p_plot = sub.add_parser("emit-plots", help="turn trace CSVs into long-format plot tables")
    p_plot.add_argument("traces", nargs="+", help="trace CSV files")
    p_plot.add_argument("--out", default=".", help="output directory")
    p_plot.add_argument("--quiet", action="store_true")
    p_plot.set_defaults(func=cmd_emit_plots)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(getattr(args, "quiet", False))
    try:
        return args.func(args)
    except (ParseError, SchemaError, MalformedTrace) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
