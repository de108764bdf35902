"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 input parse error,
4 simulation anomaly threshold exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import engine, report
from .mmu import (
    CounterFormatError,
    DsnRegisterFile,
    DsnViolation,
    WalkMode,
    load_counters,
    translate_gpa,
    virtualization_cost,
)
from .scheduler import SimVariant
from .trace import (
    DEFAULT_FLAVORS,
    Distribution,
    Flavor,
    TraceFormatError,
    derive_bootstorm,
    gen_synthetic,
    load_fleet_spec,
    load_snapshot,
    load_trace,
    write_trace,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_ANOMALIES = 4


def _sim_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--fleet", required=True, help="fleet spec JSON")
    sub.add_argument(
        "--variant",
        choices=[v.value for v in SimVariant],
        default=SimVariant.DYNAMIC.value,
        help="scheduler/allocator combination to replay",
    )
    sub.add_argument("--n", type=int, default=3,
                     help="segment threshold for register-file translation")
    sub.add_argument("--seed", type=int, default=0, help="seed recorded in the report")
    sub.add_argument("--period-hours", type=float, default=168.0,
                     help="allocation-option reselection period (dynamic variant)")
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--format", choices=["csv", "json", "plotdata"], default="json")
    sub.add_argument("--max-anomalies", type=int, default=0,
                     help="fail (exit 4) when the replay records more anomalies")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsegsim",
        description="Replay datacenter VM traces against segment-based memory "
        "allocation and report segment counts, latencies, and translation costs.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    replay = subs.add_parser("replay", help="replay a start/stop trace")
    replay.add_argument("--trace", required=True, help="trace CSV")
    _sim_flags(replay)

    storm = subs.add_parser("bootstorm", help="start all snapshot VMs at once")
    storm.add_argument("--snapshot", required=True, help="snapshot CSV")
    storm.add_argument("--horizon-hours", type=float, default=1.0,
                       help="simulated hours before the bootstormed VMs stop")
    _sim_flags(storm)

    gen = subs.add_parser("gen-trace", help="generate a synthetic trace")
    gen.add_argument("--vms", type=int, required=True)
    gen.add_argument("--flavors", help="flavor JSON; omit for the built-in catalog")
    gen.add_argument("--arrival", default="exp:100",
                     help="inter-arrival gap: fixed:X | uniform:LO:HI | exp:MEAN")
    gen.add_argument("--lifetime", default="exp:36000",
                     help="VM lifetime: as --arrival, or `none` for arrival-only")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="trace CSV to write")

    trans = subs.add_parser("translate", help="translate one guest physical address")
    trans.add_argument("--registers", required=True, help="register file JSON")
    trans.add_argument("--gpa", required=True, help="guest physical address (0x.. ok)")

    cost = subs.add_parser("costmodel", help="print the virtualization cost breakdown")
    cost.add_argument("--counters", required=True, help="workload counter file")
    cost.add_argument("--mode", choices=[m.value for m in WalkMode], required=True)

    return parser


def _load_registers(path: str) -> DsnRegisterFile:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return DsnRegisterFile(
        n=int(data["n"]),
        gb=tuple(int(x) for x in data["gb"]),
        hb=tuple(int(x) for x in data["hb"]),
        limit=int(data["limit"]),
    )


def _load_flavors(path: str | None) -> tuple[Flavor, ...]:
    if path is None:
        return DEFAULT_FLAVORS
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return tuple(
        Flavor(int(f["memory_bytes"]), int(f["cores"]), float(f.get("weight", 1.0)))
        for f in data
    )


def _run_and_emit(events, args) -> int:
    fleet = load_fleet_spec(args.fleet)
    result = engine.run(
        events,
        fleet,
        SimVariant(args.variant),
        n=args.n,
        seed=args.seed,
        reselect_period=args.period_hours * 3600.0,
    )
    files = report.emit(result, args.format, args.out)
    hist = report.segment_histogram(result)
    print(
        f"placed {result.placed}/{result.start_count} VMs "
        f"({result.rejections} rejected, {result.anomalies} anomalies); "
        f"pct_1={report.format_pct(hist.pct_1)}"
    )
    for path in files:
        print(f"wrote {path}")
    if result.anomalies > args.max_anomalies:
        print(
            f"error: {result.anomalies} anomalies exceed the threshold "
            f"{args.max_anomalies}",
            file=sys.stderr,
        )
        return EXIT_ANOMALIES
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            return _run_and_emit(load_trace(args.trace), args)
        if args.command == "bootstorm":
            snapshot = load_snapshot(args.snapshot)
            events = derive_bootstorm(snapshot, int(args.horizon_hours * 3600))
            return _run_and_emit(events, args)
        if args.command == "gen-trace":
            lifetime = (
                None if args.lifetime == "none" else Distribution.parse(args.lifetime)
            )
            events = gen_synthetic(
                args.vms,
                _load_flavors(args.flavors),
                Distribution.parse(args.arrival),
                lifetime,
                args.seed,
            )
            write_trace(events, args.out)
            print(f"wrote {args.out} ({len(events)} events)")
            return EXIT_OK
        if args.command == "translate":
            regs = _load_registers(args.registers)
            try:
                hpa = translate_gpa(regs, int(args.gpa, 0))
            except DsnViolation as exc:
                print(f"violation: {exc}")
                return EXIT_OK
            print(f"hpa {hpa:#x}")
            return EXIT_OK
        if args.command == "costmodel":
            counters = load_counters(args.counters)
            breakdown = virtualization_cost(WalkMode(args.mode), counters)
            print(json.dumps(breakdown.as_dict(), indent=2))
            return EXIT_OK
    except (TraceFormatError, CounterFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: cannot read input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    parser.error(f"unknown command {args.command!r}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
