"""Command-line entry point: ``renass {run,compare,generate,oracle-check}``.

Exit codes: 0 success, 1 invalid model, 2 I/O failure, 3 bad flags,
4 model outside the oracle domain, 5 oracle check failed (|z| > 3).
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import numpy as np

from .engine import OT, ST, PMWindow, SimParams, compare_runs, run_replications
from .errors import (
    DomainSizeError,
    GenerationError,
    ParseError,
    UnsupportedConfigurationError,
    ValidationError,
)
from .metrics import compare_series
from .model import AgentId, Kind
from .oracle import monte_carlo_check
from .scenario import GenParams, generate, load, save

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_FLAGS = 3
EXIT_DOMAIN = 4
EXIT_CHECK_FAILED = 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FLAGS, f"{self.prog}: error: {message}\n")


def fmt(x: float) -> str:
    return f"{x:.9g}"


def _agent_ref(text: str) -> AgentId:
    text = text.strip()
    for prefix, kind in (("com", Kind.COMPONENT), ("con", Kind.CONNECTOR)):
        if text.startswith(prefix) and text[len(prefix):].isdigit():
            return AgentId(kind, int(text[len(prefix):]))
    raise argparse.ArgumentTypeError(f"agent must look like com3 or con7, got {text!r}")


def _pm_window(text: str) -> PMWindow:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"PM window must be AGENT:PERIOD:DURATION, got {text!r}")
    try:
        period, duration = int(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"PM period and duration must be integers in {text!r}") from None
    if period < 1 or not 1 <= duration <= period:
        raise argparse.ArgumentTypeError(f"need period >= 1 and 1 <= duration <= period in {text!r}")
    return PMWindow(_agent_ref(parts[0]), period, duration)


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {text}")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {text}")
    return value


def _sim_flags(p: argparse.ArgumentParser, replications_default: int = 1) -> None:
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--ticks", type=_positive, required=True, help="simulation horizon T")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reliability", type=_probability, help="override every agent's per-tick reliability")
    p.add_argument("--replications", type=_positive, default=replications_default)
    p.add_argument(
        "--pm",
        type=_pm_window,
        action="append",
        default=[],
        metavar="AGENT:PERIOD:DURATION",
        help="preventive maintenance window, e.g. com3:500:10 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="renass", description="Availability simulation of reconfigurable networked software.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate and write the per-tick availability series")
    _sim_flags(p)
    toggle = p.add_mutually_exclusive_group()
    toggle.add_argument("--reconfig", dest="reconfig", action="store_true", default=True)
    toggle.add_argument("--no-reconfig", dest="reconfig", action="store_false")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--events", help="events CSV path (default: <out>.events.csv)")

    p = sub.add_parser("compare", help="paired-seed reconfiguration vs baseline comparison")
    _sim_flags(p)
    p.add_argument("--out", required=True, help="CSV output path")

    p = sub.add_parser("generate", help="write a randomly generated model")
    d = GenParams()
    p.add_argument("--out", required=True)
    p.add_argument("--components", type=_positive, default=d.components)
    p.add_argument("--connectors", type=int, default=d.connectors)
    p.add_argument("--services", type=_positive, default=d.services)
    p.add_argument("--businesses", type=_positive, default=d.businesses)
    p.add_argument("--critical-fraction", type=_fraction, default=d.critical_fraction)
    p.add_argument("--substitutes", type=int, default=d.substitutes_per_critical_agent)
    p.add_argument("--support-min", type=_positive, default=d.support_size_range[0])
    p.add_argument("--support-max", type=_positive, default=d.support_size_range[1])
    p.add_argument("--reliability", type=_probability, default=d.reliability)
    p.add_argument("--seed", type=int, default=d.seed)

    p = sub.add_parser("oracle-check", help="Monte Carlo estimate vs exact oracle on a small model")
    _sim_flags(p, replications_default=100_000)
    p.add_argument("--no-reconfig", dest="reconfig", action="store_false", default=True)
    return parser


def threads_from_env() -> int:
    raw = os.environ.get("RENASS_THREADS", "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"RENASS_THREADS must be an integer, got {raw!r}") from None
    if value < 0:
        raise UsageError("RENASS_THREADS must be >= 0")
    return value


def _params(args, reconfig: bool = True) -> SimParams:
    return SimParams(
        ticks=args.ticks,
        seed=args.seed,
        reconfig_enabled=reconfig,
        reliability_override=args.reliability,
        pm_schedule=tuple(args.pm),
        replications=args.replications,
    )


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_run(args) -> int:
    model = load(args.model)
    params = _params(args, args.reconfig)
    result = run_replications(model, params, threads_from_env(), keep_counters=True, record_events=True)
    counters = result.counters  # (R, T, B, 4)
    per_business = ((counters[..., OT] + counters[..., ST]) / counters.sum(axis=-1)).mean(axis=0)
    system = result.system_a0.mean(axis=0)
    header = ["tick", "system_a0", *(f"business_{b}_a0" for b in result.business_ids)]
    rows = (
        [t + 1, fmt(system[t]), *(fmt(v) for v in per_business[t])] for t in range(params.ticks)
    )
    _write_csv(args.out, header, rows)
    events_path = args.events or f"{args.out}.events.csv"
    _write_csv(
        events_path,
        ["replication", "tick", "event", "agent", "old", "new"],
        (
            [e.replication, e.tick, e.action, str(e.agent), "" if e.old is None else str(e.old),
             "" if e.new is None else str(e.new)]
            for e in result.events
        ),
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    model = load(args.model)
    on, off = compare_runs(model, _params(args), threads_from_env())
    a = on.system_a0.mean(axis=0)
    b = off.system_a0.mean(axis=0)
    report = compare_series(a, b)
    n = args.replications
    header = ["tick", "a0_reconfig", "a0_baseline", "gap"]
    columns = [a, b, report.gap]
    if n > 1:
        header += ["se_reconfig", "se_baseline", "se_gap"]
        for series in (on.system_a0, off.system_a0, on.system_a0 - off.system_a0):
            columns.append(series.std(axis=0, ddof=1) / math.sqrt(n))
    stacked = np.column_stack(columns)
    _write_csv(args.out, header, ([t + 1, *(fmt(v) for v in stacked[t])] for t in range(len(a))))
    print(f"min_gap {fmt(report.min_gap)}")
    print(f"gap_trend {fmt(report.gap_trend)}")
    return EXIT_OK


def cmd_generate(args) -> int:
    params = GenParams(
        components=args.components,
        connectors=args.connectors,
        services=args.services,
        businesses=args.businesses,
        critical_fraction=args.critical_fraction,
        substitutes_per_critical_agent=args.substitutes,
        support_size_range=(args.support_min, args.support_max),
        reliability=args.reliability,
        seed=args.seed,
    )
    try:
        model = generate(params)
    except GenerationError as e:
        raise UsageError(str(e)) from None
    save(model, args.out)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    model = load(args.model)
    params = _params(args, args.reconfig)
    try:
        check = monte_carlo_check(model, args.ticks, params=params, threads=threads_from_env())
    except (UnsupportedConfigurationError, DomainSizeError) as e:
        print(f"renass: model outside the oracle domain: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    print(f"oracle {fmt(check.oracle)}")
    print(f"estimate {fmt(check.estimate)}")
    print(f"replications {check.replications}")
    print(f"z {fmt(check.z)}")
    return EXIT_OK if check.passed else EXIT_CHECK_FAILED


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "generate": cmd_generate,
    "oracle-check": cmd_oracle_check,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"renass: {e}", file=sys.stderr)
        return EXIT_FLAGS
    except (ValidationError, ParseError) as e:
        print(f"renass: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as e:
        # parameter combinations rejected by SimParams (e.g. PM on an unknown agent)
        print(f"renass: {e}", file=sys.stderr)
        return EXIT_FLAGS
    except OSError as e:
        print(f"renass: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
