"""``rum`` command line: gen, ingest and mixed.

Exit codes: 0 success, 1 usage or bad input, 2 verification failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from lsmrum.bench.config import ConfigError, load_config
from lsmrum.bench.report import render
from lsmrum.bench.runner import STRATEGIES, VerificationError, parse_strategies, run_ingest, run_mixed
from lsmrum.bench.workload import KINDS, MIXED_QUERY_AREA, SELECTIVITY_LADDER, TraceError, gen_workload, read_trace, write_trace
from lsmrum.storage import StorageError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_IO = 3

log = logging.getLogger("rum")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(v: str) -> int:
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _fraction(v: str) -> float:
    f = float(v)
    if not 0 <= f < 1:
        raise argparse.ArgumentTypeError("must be in [0, 1)")
    return f


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rum", description="LSM RUM-tree benchmark harness")
    p.add_argument("-v", "--verbose", action="store_true", help="log flushes and merges")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic trace")
    g.add_argument("--kind", choices=KINDS, required=True)
    g.add_argument("--ops", type=_positive, required=True)
    g.add_argument("--oids", type=_positive, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--delete-fraction", type=_fraction, default=0.0)
    g.add_argument("--query-fraction", type=_fraction, default=0.0)
    area = g.add_mutually_exclusive_group()
    area.add_argument("--query-area", type=float, default=MIXED_QUERY_AREA, help="window area as a fraction of the world")
    area.add_argument("--ladder", action="store_true", help="cycle query windows through the selectivity ladder")
    g.add_argument("--step-sigma", type=float, default=1e-4, help="moving-kind step as a fraction of the world extent")
    g.add_argument("--out", required=True)

    for name, helptext in (("ingest", "time ingestion of a trace"), ("mixed", "interleaved updates and queries")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--trace", required=True)
        s.add_argument("--strategy", default="um_fmbv", help=f"'all' or a comma list of {', '.join(STRATEGIES)}")
        s.add_argument("--config", help="key=value file of engine settings")
        s.add_argument("--report", help="output path (.json or .csv); stdout when omitted")
        s.add_argument("--format", choices=("json", "csv"), help="overrides the report extension")
        if name == "ingest":
            s.add_argument("--threads", type=_positive, default=1)
        else:
            s.add_argument("--verify", action="store_true", help="check every answer against the replay oracle")
    return p


def _format_for(args) -> str:
    if args.format:
        return args.format
    if args.report and Path(args.report).suffix.lower() == ".csv":
        return "csv"
    return "json"


def _cmd_gen(args) -> int:
    ops = gen_workload(
        args.kind,
        args.ops,
        args.oids,
        seed=args.seed,
        delete_fraction=args.delete_fraction,
        query_fraction=args.query_fraction,
        query_area=SELECTIVITY_LADDER if args.ladder else args.query_area,
        step_sigma=args.step_sigma,
    )
    write_trace(ops, args.out)
    log.info("wrote %d ops to %s", len(ops), args.out)
    return EXIT_OK


def _cmd_run(args) -> int:
    strategies = parse_strategies(args.strategy)
    config = load_config(args.config)
    ops = read_trace(args.trace)
    reports = []
    for strategy in strategies:
        if args.cmd == "ingest":
            report, index = run_ingest(ops, strategy, threads=args.threads, config=config)
        else:
            try:
                report, index = run_mixed(ops, strategy, config=config, verify=args.verify)
            except VerificationError as exc:
                print(f"rum: verification failed: {exc}", file=sys.stderr)
                return EXIT_VERIFY
        index.close()
        reports.append(report)
    text = render(reports, _format_for(args))
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.cmd == "gen":
            return _cmd_gen(args)
        return _cmd_run(args)
    except (ConfigError, TraceError, ValueError) as exc:
        print(f"rum: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, StorageError) as exc:
        print(f"rum: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
