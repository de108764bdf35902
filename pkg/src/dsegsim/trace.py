"""VM trace parsing, bootstorm derivation, synthetic generation, fleets.

The trace format is CSV with header ``vm_id,kind,time,cores,memory_bytes``.
Start rows carry all five fields; stop rows leave cores and memory empty.
Times are integer seconds of simulated time. Fleets are described by server
generations (RAM, cores, share of the fleet) in a small JSON file.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from .scheduler import MachineView
from .segments import new_machine

TRACE_HEADER = ("vm_id", "kind", "time", "cores", "memory_bytes")
SNAPSHOT_HEADER = (
    "vm_id", "cores", "memory_bytes", "host_id", "host_ram_bytes", "host_cores",
)

GIB = 1 << 30


class TraceFormatError(ValueError):
    """A trace or snapshot line violates the schema."""

    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


class EventKind(Enum):
    START = "start"
    STOP = "stop"


@dataclass(frozen=True)
class VmEvent:
    vm_id: str
    kind: EventKind
    time: int
    cores: int | None = None
    memory_bytes: int | None = None


def start_event(vm_id: str, time: int, cores: int, memory_bytes: int) -> VmEvent:
    return VmEvent(vm_id, EventKind.START, time, cores, memory_bytes)


def stop_event(vm_id: str, time: int) -> VmEvent:
    return VmEvent(vm_id, EventKind.STOP, time)


def _field_int(row: list[str], idx: int, name: str, lineno: int) -> int:
    try:
        return int(row[idx])
    except (ValueError, IndexError):
        raise TraceFormatError(lineno, f"bad {name} in {row!r}") from None


def parse_trace(source: TextIO | str) -> list[VmEvent]:
    """Parse a trace, returning events sorted by time (stable for ties).

    The header row is optional on input; serialization always writes it.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    events: list[VmEvent] = []
    started: set[str] = set()
    for lineno, row in enumerate(csv.reader(source), start=1):
        if not row or (lineno == 1 and tuple(row) == TRACE_HEADER):
            continue
        if len(row) not in (3, 5):
            raise TraceFormatError(lineno, f"expected 3 or 5 fields, got {len(row)}")
        vm_id, kind = row[0].strip(), row[1].strip().lower()
        if not vm_id:
            raise TraceFormatError(lineno, "empty vm_id")
        time = _field_int(row, 2, "time", lineno)
        if time < 0:
            raise TraceFormatError(lineno, f"negative time {time}")
        if kind == "start":
            if len(row) != 5:
                raise TraceFormatError(lineno, "start row needs cores and memory_bytes")
            cores = _field_int(row, 3, "cores", lineno)
            memory = _field_int(row, 4, "memory_bytes", lineno)
            if cores < 1:
                raise TraceFormatError(lineno, f"cores must be >= 1, got {cores}")
            if memory <= 0:
                raise TraceFormatError(lineno, f"memory_bytes must be positive, got {memory}")
            if vm_id in started:
                raise TraceFormatError(lineno, f"duplicate start for vm {vm_id!r}")
            started.add(vm_id)
            events.append(start_event(vm_id, time, cores, memory))
        elif kind == "stop":
            if len(row) == 5 and (row[3].strip() or row[4].strip()):
                raise TraceFormatError(lineno, "stop row must leave cores and memory empty")
            events.append(stop_event(vm_id, time))
        else:
            raise TraceFormatError(lineno, f"unknown event kind {row[1]!r}")
    events.sort(key=lambda e: e.time)
    return events


def serialize_trace(events: Iterable[VmEvent]) -> str:
    """Canonical trace text: header, one row per event, LF line endings."""
    lines = [",".join(TRACE_HEADER)]
    for e in events:
        if e.kind is EventKind.START:
            lines.append(f"{e.vm_id},start,{e.time},{e.cores},{e.memory_bytes}")
        else:
            lines.append(f"{e.vm_id},stop,{e.time},,")
    return "\n".join(lines) + "\n"


def load_trace(path: str | Path) -> list[VmEvent]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_trace(fh)


def write_trace(events: Iterable[VmEvent], path: str | Path) -> None:
    Path(path).write_text(serialize_trace(events), encoding="utf-8")


@dataclass(frozen=True)
class SnapshotRecord:
    """One running VM captured from a live cluster, with its host's shape."""

    vm_id: str
    cores: int
    memory_bytes: int
    host_id: str
    host_ram_bytes: int
    host_cores: int


def parse_snapshot(source: TextIO | str) -> list[SnapshotRecord]:
    if isinstance(source, str):
        source = io.StringIO(source)
    records = []
    for lineno, row in enumerate(csv.reader(source), start=1):
        if not row or (lineno == 1 and tuple(row) == SNAPSHOT_HEADER):
            continue
        if len(row) != 6:
            raise TraceFormatError(lineno, f"expected 6 fields, got {len(row)}")
        cores = _field_int(row, 1, "cores", lineno)
        memory = _field_int(row, 2, "memory_bytes", lineno)
        host_ram = _field_int(row, 4, "host_ram_bytes", lineno)
        host_cores = _field_int(row, 5, "host_cores", lineno)
        if min(cores, memory, host_ram, host_cores) <= 0:
            raise TraceFormatError(lineno, "sizes must be positive")
        records.append(
            SnapshotRecord(row[0].strip(), cores, memory, row[3].strip(), host_ram, host_cores)
        )
    return records


def load_snapshot(path: str | Path) -> list[SnapshotRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_snapshot(fh)


def derive_bootstorm(snapshot: Sequence[SnapshotRecord], horizon: int) -> list[VmEvent]:
    """All snapshot VMs start simultaneously at t=0 and stop at the horizon."""
    ordered = sorted(snapshot, key=lambda r: r.vm_id)
    events = [start_event(r.vm_id, 0, r.cores, r.memory_bytes) for r in ordered]
    events += [stop_event(r.vm_id, horizon) for r in ordered]
    return events


@dataclass(frozen=True)
class Flavor:
    """A bookable VM shape. Weights are relative sampling frequencies."""

    memory_bytes: int
    cores: int
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.memory_bytes <= 0 or self.cores < 1 or self.weight < 0:
            raise ValueError(f"bad flavor {self}")


# Public-cloud style catalog: 14 bookable sizes, demand concentrated on the
# small ones. RAM per core grows with the flavor so memory fills before cores.
DEFAULT_FLAVORS = (
    Flavor(3 * GIB // 4, 1, 8),
    Flavor(1 * GIB, 1, 10),
    Flavor(7 * GIB // 4, 1, 10),
    Flavor(2 * GIB, 1, 12),
    Flavor(7 * GIB // 2, 1, 12),
    Flavor(4 * GIB, 1, 12),
    Flavor(7 * GIB, 1, 10),
    Flavor(8 * GIB, 1, 10),
    Flavor(14 * GIB, 2, 6),
    Flavor(16 * GIB, 2, 6),
    Flavor(28 * GIB, 4, 4),
    Flavor(32 * GIB, 4, 4),
    Flavor(56 * GIB, 8, 3),
    Flavor(64 * GIB, 8, 3),
)


class Distribution:
    """Sampling distribution for inter-arrival gaps and lifetimes (seconds)."""

    def __init__(self, kind: str, *params: float):
        self.kind = kind
        self.params = params
        if kind == "fixed":
            if len(params) != 1 or params[0] < 0:
                raise ValueError(f"fixed distribution needs one value >= 0: {params}")
        elif kind == "uniform":
            if len(params) != 2 or not 0 <= params[0] <= params[1]:
                raise ValueError(f"uniform distribution needs 0 <= lo <= hi: {params}")
        elif kind == "exponential":
            if len(params) != 1 or params[0] <= 0:
                raise ValueError(f"exponential distribution needs mean > 0: {params}")
        else:
            raise ValueError(f"unknown distribution kind {kind!r}")

    @classmethod
    def fixed(cls, value: float) -> "Distribution":
        return cls("fixed", value)

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "Distribution":
        return cls("uniform", lo, hi)

    @classmethod
    def exponential(cls, mean: float) -> "Distribution":
        return cls("exponential", mean)

    @classmethod
    def parse(cls, spec: str) -> "Distribution":
        """Parse `fixed:X`, `uniform:LO:HI`, or `exp:MEAN`."""
        parts = spec.split(":")
        kinds = {"fixed": "fixed", "uniform": "uniform", "exp": "exponential"}
        if parts[0] not in kinds:
            raise ValueError(f"unknown distribution spec {spec!r}")
        return cls(kinds[parts[0]], *(float(p) for p in parts[1:]))

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.params[0]
        if self.kind == "uniform":
            return rng.uniform(*self.params)
        return rng.expovariate(1.0 / self.params[0])

    def __str__(self) -> str:
        return f"{self.kind}({', '.join(str(p) for p in self.params)})"


def gen_synthetic(
    vm_count: int,
    flavors: Sequence[Flavor],
    interarrival: Distribution,
    lifetime: Distribution | None,
    seed: int,
) -> list[VmEvent]:
    """Generate a reproducible trace of ``vm_count`` VMs.

    ``lifetime=None`` produces an arrival-only trace (no stop events). When
    vm_count >= len(flavors), every flavor appears at least once so the trace
    exhibits exactly len(flavors) distinct demand sizes.
    """
    if vm_count < 0:
        raise ValueError("vm_count must be non-negative")
    if not flavors:
        raise ValueError("flavor set is empty")
    if sum(f.weight for f in flavors) <= 0:
        raise ValueError("flavor weights must not all be zero")
    rng = random.Random(seed)
    picks = rng.choices(range(len(flavors)), weights=[f.weight for f in flavors], k=vm_count)
    _force_flavor_coverage(picks, len(flavors), rng)
    width = max(5, len(str(max(vm_count - 1, 0))))
    events: list[tuple[int, int, VmEvent]] = []
    clock = 0.0
    seq = 0
    for i, pick in enumerate(picks):
        clock += interarrival.sample(rng)
        start = int(round(clock))
        flavor = flavors[pick]
        vm_id = f"vm{i:0{width}d}"
        events.append((start, seq, start_event(vm_id, start, flavor.cores, flavor.memory_bytes)))
        seq += 1
        if lifetime is not None:
            stop = start + max(1, int(round(lifetime.sample(rng))))
            events.append((stop, seq, stop_event(vm_id, stop)))
            seq += 1
    events.sort(key=lambda item: (item[0], item[1]))
    return [e for _, _, e in events]


def _force_flavor_coverage(picks: list[int], flavor_count: int, rng: random.Random) -> None:
    """Overwrite duplicated picks so each flavor index occurs at least once."""
    if len(picks) < flavor_count:
        return
    counts = [0] * flavor_count
    for p in picks:
        counts[p] += 1
    missing = [i for i, c in enumerate(counts) if c == 0]
    if not missing:
        return
    replaceable = [i for i, p in enumerate(picks) if counts[p] > 1]
    for flavor in missing:
        idx = replaceable.pop(rng.randrange(len(replaceable)))
        while counts[picks[idx]] <= 1:  # earlier overwrite made this pick unique
            idx = replaceable.pop(rng.randrange(len(replaceable)))
        counts[picks[idx]] -= 1
        counts[flavor] += 1
        picks[idx] = flavor


@dataclass(frozen=True)
class Generation:
    """One server generation: its shape and its share of the fleet."""

    name: str
    ram_bytes: int
    cores: int
    proportion: float  # percent of the fleet

    def __post_init__(self) -> None:
        if self.ram_bytes <= 0 or self.cores < 1 or self.proportion < 0:
            raise ValueError(f"bad generation {self}")


# Mixed datacenter fleet used as the default replay target: two recent server
# generations alongside three older ones, in equal shares.
DEFAULT_GENERATIONS = (
    Generation("HPC", 128 * GIB, 24, 20.0),
    Generation("Gen4", 192 * GIB, 24, 20.0),
    Generation("Gen5", 256 * GIB, 40, 20.0),
    Generation("Gen6", 192 * GIB, 48, 20.0),
    Generation("Godzilla", 512 * GIB, 32, 20.0),
)


@dataclass(frozen=True)
class FleetSpec:
    generations: tuple[Generation, ...]
    machine_count: int
    reserved_bytes: int = 0

    def __post_init__(self) -> None:
        if self.machine_count < 1:
            raise ValueError("machine_count must be >= 1")
        if self.reserved_bytes < 0:
            raise ValueError("reserved_bytes must be >= 0")
        total = sum(g.proportion for g in self.generations)
        if not math.isclose(total, 100.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"generation proportions sum to {total}, expected 100")


def default_fleet_spec(machine_count: int, reserved_bytes: int = 0) -> FleetSpec:
    return FleetSpec(DEFAULT_GENERATIONS, machine_count, reserved_bytes)


def generation_counts(spec: FleetSpec) -> list[int]:
    """Machines per generation by largest-remainder rounding (ties follow
    listing order)."""
    exact = [spec.machine_count * g.proportion / 100.0 for g in spec.generations]
    counts = [int(math.floor(x)) for x in exact]
    leftover = spec.machine_count - sum(counts)
    remainders = sorted(
        range(len(exact)), key=lambda i: (-(exact[i] - counts[i]), i)
    )
    for i in remainders[:leftover]:
        counts[i] += 1
    return counts


def build_fleet(spec: FleetSpec) -> list[MachineView]:
    """Instantiate the fleet: machine ids count up through the generations in
    listing order."""
    machines: list[MachineView] = []
    machine_id = 0
    for gen, count in zip(spec.generations, generation_counts(spec)):
        for _ in range(count):
            flist = new_machine(gen.ram_bytes, spec.reserved_bytes, machine_id)
            machines.append(MachineView(machine_id, gen.cores, gen.cores, flist))
            machine_id += 1
    return machines


def load_fleet_spec(path: str | Path) -> FleetSpec:
    """Read a fleet description from JSON.

    Schema: {"machine_count": int, "reserved_bytes": int (optional),
    "generations": [{"name", "ram_bytes", "cores", "proportion"}, ...]}
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        generations = tuple(
            Generation(g["name"], int(g["ram_bytes"]), int(g["cores"]), float(g["proportion"]))
            for g in data["generations"]
        )
        return FleetSpec(
            generations, int(data["machine_count"]), int(data.get("reserved_bytes", 0))
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"bad fleet spec {path}: {exc}") from exc


def fleet_spec_to_json(spec: FleetSpec) -> str:
    return json.dumps(
        {
            "machine_count": spec.machine_count,
            "reserved_bytes": spec.reserved_bytes,
            "generations": [
                {
                    "name": g.name,
                    "ram_bytes": g.ram_bytes,
                    "cores": g.cores,
                    "proportion": g.proportion,
                }
                for g in spec.generations
            ],
        },
        indent=2,
    ) + "\n"
