"""Filter-chain VM placement with a segment-minimizing final filter.

The scheduler keeps a local mirror of every machine's free-segment list,
dry-runs the hypervisor allocator on each candidate, and places the VM where
it would receive the fewest segments. It also owns the periodic
allocation-option reselection: the recorded start/stop log is replayed on a
fresh fleet under both composition policies and the one producing more
register-translatable VMs wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .segments import (
    AllocationPolicy,
    FreeSegmentList,
    allocate,
    peek_segment_count,
    release,
)

WEEK_SECONDS = 7 * 24 * 3600


class NoCandidateError(Exception):
    """Every machine was filtered out or infeasible: the VM is rejected."""


class SimVariant(Enum):
    """Which scheduler/allocator combination a simulation exercises."""

    BASELINE = "baseline"        # stock spread scheduler + buddy allocator
    PLACEMENT_OPT1 = "opt1"      # min-segment placement, smallest-first composition
    PLACEMENT_OPT2 = "opt2"      # min-segment placement, largest-first composition
    DYNAMIC = "dynamic"          # min-segment placement, periodically reselected policy


@dataclass
class MachineView:
    """Scheduler-side view of one machine: cores plus the free-list mirror."""

    machine_id: int
    cores_total: int
    cores_free: int
    free_list: FreeSegmentList

    @property
    def free_bytes(self) -> int:
        return self.free_list.free_bytes


@dataclass(frozen=True)
class PlacementRequest:
    vm_id: str
    cores: int
    memory_bytes: int

    def __post_init__(self) -> None:
        if self.cores < 1 or self.memory_bytes <= 0:
            raise ValueError(
                f"request {self.vm_id}: cores={self.cores}, "
                f"memory_bytes={self.memory_bytes}"
            )


@dataclass
class SchedulerConfig:
    n: int = 3
    current_policy: AllocationPolicy = AllocationPolicy.SMALLEST_FIRST
    reselect_period: float = WEEK_SECONDS
    variant: SimVariant = SimVariant.DYNAMIC

    def __post_init__(self) -> None:
        if self.reselect_period <= 0:
            raise ValueError("reselect_period must be positive")


class EventLog:
    """Append-only start/stop request log feeding the option reselection."""

    def __init__(self) -> None:
        self.events: list = []
        self.out_of_order = 0

    def append(self, event) -> None:
        if self.events and event.time < self.events[-1].time:
            self.out_of_order += 1
        self.events.append(event)

    def clear(self) -> None:
        self.events = []
        self.out_of_order = 0

    def __len__(self) -> int:
        return len(self.events)


def record_event(log: EventLog, event) -> EventLog:
    """Append an event; out-of-order timestamps are accepted but counted."""
    log.append(event)
    return log


def filter_resources(machines: Iterable, request: PlacementRequest) -> list:
    """Keep machines with enough free cores and free memory (boundary inclusive)."""
    return [
        m
        for m in machines
        if m.cores_free >= request.cores and m.free_bytes >= request.memory_bytes
    ]


def filter_min_segments(
    candidates: Sequence[MachineView],
    request: PlacementRequest,
    policy: AllocationPolicy,
) -> int:
    """Choose the machine whose allocator would grant the fewest segments.

    Ties go to the machine with the most free bytes, then the lowest id.
    """
    best_id = None
    best_key = None
    for machine in candidates:
        k = peek_segment_count(machine.free_list, request.memory_bytes, policy)
        if k is None:
            continue
        key = (k, -machine.free_bytes, machine.machine_id)
        if best_key is None or key < best_key:
            best_key = key
            best_id = machine.machine_id
    if best_id is None:
        raise NoCandidateError(f"no machine can host {request.vm_id}")
    return best_id


def baseline_pick(candidates: Sequence, request: PlacementRequest) -> int:
    """Stock spread objective: most free cores, ties to the lowest id."""
    best_id = None
    best_key = None
    for machine in candidates:
        key = (-machine.cores_free, machine.machine_id)
        if best_key is None or key < best_key:
            best_key = key
            best_id = machine.machine_id
    if best_id is None:
        raise NoCandidateError(f"no machine can host {request.vm_id}")
    return best_id


def _replay_outcome(
    events: Sequence, fleet_spec, policy: AllocationPolicy, n: int
) -> tuple[int, int]:
    """Replay a start/stop log on a fresh fleet; return (#VMs with k <= n,
    total segments granted)."""
    from .trace import EventKind, build_fleet  # deferred: trace uses MachineView

    machines = build_fleet(fleet_spec)
    by_id = {m.machine_id: m for m in machines}
    live: dict[str, tuple[int, object, int]] = {}
    dsn_vms = 0
    total_segments = 0
    ordered = sorted(
        enumerate(events), key=lambda p: (p[1].time, p[1].kind is EventKind.START, p[0])
    )
    for _, event in ordered:
        if event.kind is EventKind.STOP:
            if event.vm_id in live:
                mid, alloc, cores = live.pop(event.vm_id)
                release(by_id[mid].free_list, alloc, event.time)
                by_id[mid].cores_free += cores
            continue
        if event.vm_id in live:
            continue
        request = PlacementRequest(event.vm_id, event.cores, event.memory_bytes)
        candidates = filter_resources(machines, request)
        if not candidates:
            continue
        try:
            mid = filter_min_segments(candidates, request, policy)
        except NoCandidateError:
            continue
        alloc = allocate(
            by_id[mid].free_list, event.vm_id, event.memory_bytes, policy, event.time
        )
        by_id[mid].cores_free -= event.cores
        live[event.vm_id] = (mid, alloc, event.cores)
        total_segments += alloc.k
        if alloc.k <= n:
            dsn_vms += 1
    return dsn_vms, total_segments


def reselect_option(log: EventLog, fleet_spec, config: SchedulerConfig) -> AllocationPolicy:
    """Replay the log under both policies and adopt the one yielding more
    VMs with k <= n; ties prefer fewer total segments, then the current
    policy. The log is reset afterwards."""
    if not log.events:
        return config.current_policy
    scores = {
        policy: _replay_outcome(log.events, fleet_spec, policy, config.n)
        for policy in AllocationPolicy
    }
    log.clear()
    current = config.current_policy
    best = current
    best_score = (-scores[current][0], scores[current][1])
    for policy in AllocationPolicy:
        score = (-scores[policy][0], scores[policy][1])
        if score < best_score:
            best_score = score
            best = policy
    return best
