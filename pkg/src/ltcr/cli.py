"""Command line: ``ltcr run|summarize|report|verify``.

Exit codes: 0 success, 1 config error, 2 run failure, 3 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, RunFailure

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_VERIFY = 0, 1, 2, 3


def _cmd_run(args) -> int:
    from .config import load_config
    from .harness import run_experiment

    cfg = load_config(args.config)
    if args.output_dir:
        cfg = cfg.model_copy(update={"output_dir": args.output_dir})
    if args.workers:
        cfg = cfg.model_copy(update={"workers": args.workers})
    run_dir = run_experiment(cfg)
    print(run_dir)
    return EXIT_OK


def _cmd_summarize(args) -> int:
    from .harness import format_summary, load_run, summarize

    runs = [load_run(d) for d in args.dirs]
    print(format_summary(summarize(runs, args.threshold)))
    return EXIT_OK


def _cmd_report(args) -> int:
    from .report import render_report

    print(render_report(args.dirs, args.out, args.threshold))
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import run_verification

    ok = True
    for name, passed, detail in run_verification(quick=args.quick):
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= passed
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltcr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--output-dir")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("summarize", help="summary table over run directories")
    s.add_argument("dirs", nargs="+")
    s.add_argument("--threshold", type=float, help="report median frames to reach this smoothed return")
    s.set_defaults(func=_cmd_summarize)

    rp = sub.add_parser("report", help="render SVG figures and a Markdown summary")
    rp.add_argument("dirs", nargs="+")
    rp.add_argument("--out", default="report")
    rp.add_argument("--threshold", type=float)
    rp.set_defaults(func=_cmd_report)

    v = sub.add_parser("verify", help="run the projection, gradient and linear-convergence oracles")
    v.add_argument("--quick", action="store_true")
    v.set_defaults(func=_cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunFailure, OSError, ValueError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
