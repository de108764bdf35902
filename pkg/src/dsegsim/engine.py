"""Discrete-event replay of a VM trace against a simulated fleet.

Events are processed in time order, stops before starts at equal times so
memory frees before it is wanted. Each start runs the placement filter chain
and the variant's allocator, then types the VM (register-file translation
when k <= n). The engine times each allocator call, which is the one
non-reproducible output; everything else is deterministic.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

from .baseline import BuddyAllocator, DEFAULT_MAX_ORDER
from .report import SimulationReport, VmRecord
from .scheduler import (
    EventLog,
    NoCandidateError,
    PlacementRequest,
    SchedulerConfig,
    SimVariant,
    baseline_pick,
    filter_min_segments,
    filter_resources,
    record_event,
    reselect_option,
)
from .segments import AllocationPolicy, VMAllocation, VmMode, allocate, release
from .trace import EventKind, FleetSpec, VmEvent, build_fleet


@dataclass
class BaselineMachine:
    """Machine whose memory is managed by the buddy allocator."""

    machine_id: int
    cores_total: int
    cores_free: int
    buddy: BuddyAllocator

    @property
    def free_bytes(self) -> int:
        return self.buddy.free_bytes


@dataclass
class LiveVm:
    machine_id: int
    allocation: VMAllocation
    cores: int


@dataclass
class SimulationState:
    variant: SimVariant
    config: SchedulerConfig
    fleet_spec: FleetSpec
    machines: list
    clock: int = 0
    live: dict[str, LiveVm] = field(default_factory=dict)
    rejected: set[str] = field(default_factory=set)
    log: EventLog = field(default_factory=EventLog)
    records: list[VmRecord] = field(default_factory=list)
    rejections: int = 0
    anomalies: int = 0
    start_count: int = 0
    option_switches: list[tuple[int, str]] = field(default_factory=list)
    next_reselect: float = 0.0

    def machine(self, machine_id: int):
        return self._by_id[machine_id]

    def __post_init__(self) -> None:
        self._by_id = {m.machine_id: m for m in self.machines}
        self.next_reselect = self.config.reselect_period


def _variant_policy(variant: SimVariant) -> AllocationPolicy:
    if variant is SimVariant.PLACEMENT_OPT2:
        return AllocationPolicy.LARGEST_FIRST
    return AllocationPolicy.SMALLEST_FIRST


def new_state(
    fleet_spec: FleetSpec,
    variant: SimVariant,
    n: int = 3,
    reselect_period: float = 7 * 24 * 3600,
    max_order: int = DEFAULT_MAX_ORDER,
) -> SimulationState:
    config = SchedulerConfig(
        n=n,
        current_policy=_variant_policy(variant),
        reselect_period=reselect_period,
        variant=variant,
    )
    if variant is SimVariant.BASELINE:
        machines: list = [
            BaselineMachine(
                m.machine_id,
                m.cores_total,
                m.cores_free,
                BuddyAllocator(
                    m.free_list.total_bytes,
                    m.free_list.reserved_bytes,
                    max_order,
                    m.machine_id,
                ),
            )
            for m in build_fleet(fleet_spec)
        ]
    else:
        machines = build_fleet(fleet_spec)
    return SimulationState(variant, config, fleet_spec, machines)


def step(state: SimulationState, event: VmEvent) -> SimulationState:
    """Apply one event. Unknown stops and duplicate starts are recorded as
    anomalies and change nothing."""
    if state.variant is SimVariant.DYNAMIC:
        while event.time >= state.next_reselect:
            chosen = reselect_option(state.log, state.fleet_spec, state.config)
            state.config.current_policy = chosen
            state.option_switches.append((int(state.next_reselect), chosen.value))
            state.next_reselect += state.config.reselect_period
        record_event(state.log, event)
    state.clock = max(state.clock, event.time)
    if event.kind is EventKind.STOP:
        _stop_vm(state, event)
    else:
        _start_vm(state, event)
    return state


def _start_vm(state: SimulationState, event: VmEvent) -> None:
    if event.vm_id in state.live:
        state.anomalies += 1
        return
    state.start_count += 1
    request = PlacementRequest(event.vm_id, event.cores, event.memory_bytes)
    candidates = filter_resources(state.machines, request)
    if not candidates:
        state.rejections += 1
        state.rejected.add(event.vm_id)
        return
    policy = state.config.current_policy
    try:
        if state.variant is SimVariant.BASELINE:
            machine_id = baseline_pick(candidates, request)
        else:
            machine_id = filter_min_segments(candidates, request, policy)
    except NoCandidateError:
        state.rejections += 1
        state.rejected.add(event.vm_id)
        return
    machine = state.machine(machine_id)
    # thread CPU time: at microsecond scale, wall clocks mostly measure OS
    # preemption rather than the allocator
    if state.variant is SimVariant.BASELINE:
        t0 = _time.thread_time()
        alloc = machine.buddy.allocate(event.vm_id, event.memory_bytes, event.time)
        alloc.alloc_latency = _time.thread_time() - t0
    else:
        t0 = _time.thread_time()
        alloc = allocate(
            machine.free_list, event.vm_id, event.memory_bytes, policy, event.time
        )
        alloc.alloc_latency = _time.thread_time() - t0
    alloc.mode = VmMode.DSN if alloc.k <= state.config.n else VmMode.FALLBACK
    machine.cores_free -= event.cores
    state.live[event.vm_id] = LiveVm(machine_id, alloc, event.cores)
    state.records.append(
        VmRecord(
            vm_id=event.vm_id,
            time=event.time,
            machine_id=machine_id,
            k=alloc.k,
            mode=alloc.mode.value,
            alloc_latency=alloc.alloc_latency,
        )
    )


def _stop_vm(state: SimulationState, event: VmEvent) -> None:
    vm = state.live.pop(event.vm_id, None)
    if vm is None:
        # a stop for a VM we rejected is expected; anything else is a
        # double stop or a stop for a VM never started
        if event.vm_id in state.rejected:
            state.rejected.discard(event.vm_id)
        else:
            state.anomalies += 1
        return
    machine = state.machine(vm.machine_id)
    if state.variant is SimVariant.BASELINE:
        machine.buddy.release(event.vm_id)
    else:
        release(machine.free_list, vm.allocation, event.time)
    machine.cores_free += vm.cores


def event_order(events: list[VmEvent]) -> list[VmEvent]:
    """Replay order: by time, stops before starts, then stable input order."""
    return [
        e
        for _, e in sorted(
            enumerate(events),
            key=lambda p: (p[1].time, p[1].kind is EventKind.START, p[0]),
        )
    ]


def finish(state: SimulationState, seed: int = 0) -> SimulationReport:
    """Release still-running VMs (implicit stop at trace end) and build the
    report."""
    implicit = 0
    for vm_id in sorted(state.live):
        vm = state.live[vm_id]
        machine = state.machine(vm.machine_id)
        if state.variant is SimVariant.BASELINE:
            machine.buddy.release(vm_id)
        else:
            release(machine.free_list, vm.allocation, state.clock)
        machine.cores_free += vm.cores
        implicit += 1
    state.live.clear()
    final_free = {}
    for machine in state.machines:
        if state.variant is SimVariant.BASELINE:
            final_free[machine.machine_id] = machine.buddy.free_runs()
        else:
            final_free[machine.machine_id] = tuple(
                (s.base, s.limit) for s in machine.free_list.segments
            )
    return SimulationReport(
        variant=state.variant.value,
        n=state.config.n,
        seed=seed,
        machine_count=len(state.machines),
        start_count=state.start_count,
        records=tuple(state.records),
        rejections=state.rejections,
        anomalies=state.anomalies,
        implicit_stops=implicit,
        option_switches=tuple(state.option_switches),
        final_free=final_free,
    )


def run(
    events: list[VmEvent],
    fleet_spec: FleetSpec,
    variant: SimVariant,
    n: int = 3,
    seed: int = 0,
    reselect_period: float = 7 * 24 * 3600,
    max_order: int = DEFAULT_MAX_ORDER,
) -> SimulationReport:
    """Replay a trace and return the measurement report.

    Rejected placements are counted, never retried. The seed is carried into
    the report so batch runs stay distinguishable; the replay itself is
    deterministic.
    """
    state = new_state(fleet_spec, variant, n, reselect_period, max_order)
    for event in event_order(events):
        step(state, event)
    return finish(state, seed)
