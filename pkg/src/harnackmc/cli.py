"""Command line entry point: ``harnackmc {run,bounds,check-model,probe-uniqueness}``.

Exit status is 0 only when every verdict passes and no run is flagged
unreliable; configuration errors exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigurationError, DomainError, NumericalFailure
from .runner import (bounds_only, load_config, report_document, timed_run, write_report,
                     _jsonable)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harnackmc", description="Coupling, Harnack bounds and Monte Carlo checks.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run the configured verification suites"),
                       ("bounds", "evaluate the closed-form bounds only"),
                       ("check-model", "spot-check the model assumptions"),
                       ("probe-uniqueness", "shared-noise uniqueness probe")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, type=Path, help="TOML experiment config")
        s.add_argument("--seed", type=int, help="override solver.seed")
        s.add_argument("--out", type=Path, help="output directory (default: output.dir)")
        if name in ("run", "probe-uniqueness"):
            s.add_argument("--paths", type=int, help="override solver.paths")
            s.add_argument("--step", type=float, help="override solver.h_max")
            s.add_argument("--workers", type=int, default=1, help="path worker threads")
        if name == "run":
            s.add_argument("--dump-paths", action="store_true", help="write per-path CSV summaries")
    return p


def _overrides(args) -> dict:
    ov = {}
    if args.seed is not None:
        ov["solver.seed"] = args.seed
    if getattr(args, "paths", None) is not None:
        ov["solver.paths"] = args.paths
    if getattr(args, "step", None) is not None:
        ov["solver.h_max"] = args.step
    return ov


def _print_verdicts(report, out=None):
    out = sys.stdout if out is None else out
    for v in report.verdicts:
        tag = "PASS" if v.passed else "FAIL"
        print(f"{tag}  {v.name:36s} lhs={v.lhs:.6g} rhs={v.rhs:.6g} se={v.se:.3g} margin={v.margin:.6g}", file=out)
    for v in report.red_flags:
        print(f"RED FLAG: theorem-level inequality {v.name} failed", file=out)
    if report.flags.get("unreliable"):
        print("UNRELIABLE: more than 0.1% of paths had exploded weights", file=out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "probe-uniqueness":
            ov = _overrides(args)
            ov["suite.run"] = ["uniqueness-probe"]
            exp = load_config(args.config, ov)
        elif args.command == "check-model":
            exp = load_config(args.config, dict(_overrides(args), **{"suite.run": ["assumption-spot-checks"]}))
        else:
            exp = load_config(args.config, _overrides(args))
        out_dir = args.out if args.out is not None else Path(exp.raw["output"]["dir"])

        if args.command == "bounds":
            doc = {"body": {"bounds": _jsonable(bounds_only(exp)), "config": _jsonable(exp.raw)}}
            print(json.dumps(doc["body"]["bounds"], indent=2, sort_keys=True))
            write_report(doc, out_dir)
            return EXIT_OK

        dump = out_dir if getattr(args, "dump_paths", False) else None
        report, secs = timed_run(exp, getattr(args, "workers", 1), dump)
        path = write_report(report_document(report, secs), out_dir)
        _print_verdicts(report)
        print(f"report: {path}")
        return EXIT_OK if report.passed else EXIT_FAIL
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
