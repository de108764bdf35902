"""Aggregation of simulation output into the evaluation artifacts.

Produces the per-cloud segment histogram, allocation-latency statistics,
allocation frequency, demand-size CDF, and cost-model summary tables, and
serializes them as CSV, JSON, or plot-ready whitespace columns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Mapping, Sequence

from .mmu import WalkMode, WorkloadCounters, virtualization_cost
from .trace import EventKind, FleetSpec, VmEvent


@dataclass(frozen=True)
class VmRecord:
    """Outcome of one placed VM."""

    vm_id: str
    time: int
    machine_id: int
    k: int
    mode: str
    alloc_latency: float  # seconds, wall clock


@dataclass(frozen=True)
class SimulationReport:
    variant: str
    n: int
    seed: int
    machine_count: int
    start_count: int
    records: tuple[VmRecord, ...]
    rejections: int
    anomalies: int
    implicit_stops: int
    option_switches: tuple[tuple[int, str], ...]
    final_free: dict[int, tuple[tuple[int, int], ...]]

    @property
    def placed(self) -> int:
        return len(self.records)

    def latencies_ms(self) -> list[float]:
        return [r.alloc_latency * 1000.0 for r in self.records]

    def core(self) -> dict:
        """Deterministic projection: everything except wall-clock latencies."""
        return {
            "variant": self.variant,
            "n": self.n,
            "seed": self.seed,
            "machine_count": self.machine_count,
            "start_count": self.start_count,
            "records": [
                (r.vm_id, r.time, r.machine_id, r.k, r.mode) for r in self.records
            ],
            "rejections": self.rejections,
            "anomalies": self.anomalies,
            "implicit_stops": self.implicit_stops,
            "option_switches": list(self.option_switches),
            "final_free": {str(m): list(v) for m, v in sorted(self.final_free.items())},
        }


@dataclass(frozen=True)
class SegmentHistogram:
    """Share of placed VMs by granted segment count."""

    pct_1: float
    pct_2: float
    pct_3: float
    pct_gt3: float
    empty: bool = False

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.pct_1, self.pct_2, self.pct_3, self.pct_gt3)


def segment_histogram(report: SimulationReport) -> SegmentHistogram:
    if not report.records:
        return SegmentHistogram(0.0, 0.0, 0.0, 0.0, empty=True)
    buckets = [0, 0, 0, 0]
    for r in report.records:
        buckets[min(r.k, 4) - 1] += 1
    total = len(report.records)
    # b * 100 stays an exact float, so an all-ones report yields exactly 100.0
    return SegmentHistogram(*(b * 100.0 / total for b in buckets))


def latency_stats(samples: Sequence[float]) -> tuple[float, float] | None:
    """Arithmetic mean and population standard deviation, None when empty."""
    if not samples:
        return None
    n = len(samples)
    mean = sum(samples) / n
    var = sum((x - mean) ** 2 for x in samples) / n
    return mean, math.sqrt(var)


def alloc_frequency(events: Sequence[VmEvent], fleet: FleetSpec) -> float | None:
    """Start events per hour per server over the trace's time span.

    Returns 0 for a trace without starts and None (flagged) when starts exist
    but the span is zero.
    """
    starts = sum(1 for e in events if e.kind is EventKind.START)
    if starts == 0:
        return 0.0
    span = max(e.time for e in events) - min(e.time for e in events)
    if span <= 0:
        return None
    return starts / (span / 3600.0) / fleet.machine_count


@dataclass(frozen=True)
class DemandCdf:
    points: tuple[tuple[int, float], ...]  # (size, cumulative fraction)
    distinct_sizes: int


def demand_size_cdf(events: Sequence[VmEvent]) -> DemandCdf:
    sizes = sorted(e.memory_bytes for e in events if e.kind is EventKind.START)
    if not sizes:
        return DemandCdf((), 0)
    total = len(sizes)
    points: list[tuple[int, float]] = []
    seen = 0
    for i, size in enumerate(sizes):
        seen += 1
        if i + 1 == total or sizes[i + 1] != size:
            points.append((size, seen / total))
    return DemandCdf(tuple(points), len(points))


def format_pct(value: float) -> str:
    """Histogram percentage formatting: three decimals, scientific below 1e-3."""
    if value == 0:
        return "0"
    if value < 1e-3:
        return f"{value:.2E}"
    text = f"{value:.3f}".rstrip("0").rstrip(".")
    return text


def summary_dict(report: SimulationReport) -> dict:
    hist = segment_histogram(report)
    stats = latency_stats(report.latencies_ms())
    return {
        "variant": report.variant,
        "n": report.n,
        "seed": report.seed,
        "machine_count": report.machine_count,
        "start_count": report.start_count,
        "placed": report.placed,
        "rejections": report.rejections,
        "anomalies": report.anomalies,
        "implicit_stops": report.implicit_stops,
        "segment_histogram": {
            "pct_1": hist.pct_1,
            "pct_2": hist.pct_2,
            "pct_3": hist.pct_3,
            "pct_gt3": hist.pct_gt3,
            "empty": hist.empty,
        },
        "alloc_latency_ms": None if stats is None else {"mean": stats[0], "stdev": stats[1]},
        "option_switches": list(report.option_switches),
    }


def emit(report: SimulationReport, fmt: str, out_dir: str | Path) -> list[Path]:
    """Write the report under ``out_dir``; returns the files written.

    csv: records.csv, histogram.csv, summary.csv
    json: report.json
    plotdata: histogram.dat (whitespace columns, `#` header comment)
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hist = segment_histogram(report)
    written: list[Path] = []
    if fmt == "json":
        payload = summary_dict(report)
        payload["records"] = [asdict(r) for r in report.records]
        payload["final_free"] = {
            str(m): [list(span) for span in spans]
            for m, spans in sorted(report.final_free.items())
        }
        path = out / "report.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n", encoding="utf-8")
        written.append(path)
    elif fmt == "csv":
        path = out / "records.csv"
        lines = ["vm_id,time,machine_id,k,mode,alloc_latency_ms"]
        lines += [
            f"{r.vm_id},{r.time},{r.machine_id},{r.k},{r.mode},{r.alloc_latency * 1000.0!r}"
            for r in report.records
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
        path = out / "histogram.csv"
        path.write_text(
            "pct_1,pct_2,pct_3,pct_gt3\n"
            + ",".join(format_pct(v) for v in hist.as_tuple())
            + "\n",
            encoding="utf-8",
        )
        written.append(path)
        path = out / "summary.csv"
        stats = latency_stats(report.latencies_ms())
        mean, stdev = stats if stats is not None else (float("nan"), float("nan"))
        path.write_text(
            "variant,n,seed,start_count,placed,rejections,anomalies,"
            "latency_mean_ms,latency_stdev_ms\n"
            f"{report.variant},{report.n},{report.seed},{report.start_count},"
            f"{report.placed},{report.rejections},{report.anomalies},"
            f"{mean!r},{stdev!r}\n",
            encoding="utf-8",
        )
        written.append(path)
    elif fmt == "plotdata":
        path = out / "histogram.dat"
        lines = ["# segments percent_of_placed_vms (bucket 4 aggregates k > 3)"]
        lines += [
            f"{i + 1} {format_pct(v)}" for i, v in enumerate(hist.as_tuple())
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return written


_COST_MODES = (WalkMode.DSN, WalkMode.EPT, WalkMode.SHADOW)


def cost_summary_rows(
    workloads: Mapping[str, WorkloadCounters]
) -> list[tuple[str, str, float]]:
    """Per-workload virtualization cost: one row per (workload, mode)."""
    rows = []
    for name, counters in workloads.items():
        for mode in _COST_MODES:
            rows.append((name, mode.value, virtualization_cost(mode, counters).total_cycles))
    return rows


def format_cost_summary(rows: Sequence[tuple[str, str, float]]) -> str:
    """Plot-ready cost table: three mode rows per workload."""
    lines = ["# workload mode total_cycles"]
    lines += [f"{name} {mode} {total!r}" for name, mode, total in rows]
    return "\n".join(lines) + "\n"
