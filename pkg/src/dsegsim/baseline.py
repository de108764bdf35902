"""Binary-buddy page allocator standing in for a stock hypervisor allocator.

Physical memory is carved into power-of-two blocks of 4 KiB pages. A VM
demand is satisfied by repeatedly taking the largest block not exceeding the
remaining demand (capped at ``max_order``); each block comes from the
smallest sufficient order, lowest address first within an order. The blocks
granted to a VM are merged into maximal contiguous runs to report how many
memory segments the VM effectively received.
"""

from __future__ import annotations

import heapq

from .segments import (
    PAGE_SIZE,
    InsufficientMemoryError,
    InvalidSizeError,
    SegmentDescriptor,
    VMAllocation,
)

DEFAULT_MAX_ORDER = 14  # 2**14 pages = 64 MiB blocks


class BuddyAllocator:
    """Buddy allocator over the user region [reserved_bytes, total_bytes).

    Free blocks per order are kept in a min-heap (lowest address first) with a
    set for membership, so stale heap entries from coalescing are skipped
    lazily.
    """

    def __init__(self, total_bytes: int, reserved_bytes: int = 0,
                 max_order: int = DEFAULT_MAX_ORDER, machine_id: int = 0):
        if total_bytes <= 0 or reserved_bytes < 0 or reserved_bytes >= total_bytes:
            raise InvalidSizeError(
                f"total_bytes={total_bytes}, reserved_bytes={reserved_bytes}"
            )
        self.machine_id = machine_id
        self.total_bytes = total_bytes
        self.reserved_bytes = reserved_bytes
        self.max_order = max_order
        self.start_page = -(-reserved_bytes // PAGE_SIZE)
        end_page = total_bytes // PAGE_SIZE
        self.num_pages = end_page - self.start_page
        if self.num_pages <= 0:
            raise InvalidSizeError("user region smaller than one page")
        self._heaps: list[list[int]] = [[] for _ in range(max_order + 1)]
        self._sets: list[set[int]] = [set() for _ in range(max_order + 1)]
        self._owned: dict[str, list[tuple[int, int]]] = {}  # vm_id -> [(page, order)]
        self.free_pages = self.num_pages
        self._seed_region()

    def _seed_region(self) -> None:
        # Greedy decomposition of [0, num_pages) into maximal aligned blocks.
        page = 0
        while page < self.num_pages:
            align = (page & -page).bit_length() - 1 if page else self.max_order
            order = min(self.max_order, align)
            while page + (1 << order) > self.num_pages:
                order -= 1
            self._push(page, order)
            page += 1 << order

    def _push(self, page: int, order: int) -> None:
        self._sets[order].add(page)
        heapq.heappush(self._heaps[order], page)

    def _pop_lowest(self, order: int) -> int | None:
        heap, live = self._heaps[order], self._sets[order]
        while heap:
            page = heapq.heappop(heap)
            if page in live:
                live.remove(page)
                return page
        return None

    def _acquire(self, order: int) -> int | None:
        """Take a block of exactly ``order``, splitting a larger one if needed."""
        for o in range(order, self.max_order + 1):
            page = self._pop_lowest(o)
            if page is None:
                continue
            while o > order:
                o -= 1
                self._push(page + (1 << o), o)
            return page
        return None

    @property
    def free_bytes(self) -> int:
        return self.free_pages * PAGE_SIZE

    def allocate(self, vm_id: str, demand: int, now: int) -> VMAllocation:
        """Grant ceil(demand / page) pages as buddy blocks, lowest address first.

        Fails atomically when the demand exceeds the free pages.
        """
        if demand <= 0:
            raise InvalidSizeError(f"demand must be positive, got {demand}")
        if vm_id in self._owned:
            raise InvalidSizeError(f"vm {vm_id} already holds memory here")
        pages = -(-demand // PAGE_SIZE)
        if pages > self.free_pages:
            raise InsufficientMemoryError(
                f"machine {self.machine_id}: demand {demand} exceeds "
                f"{self.free_bytes} free bytes"
            )
        blocks: list[tuple[int, int]] = []
        remaining = pages
        order = min(self.max_order, remaining.bit_length() - 1)
        while remaining > 0:
            while (1 << order) > remaining:
                order -= 1
            page = self._acquire(order)
            if page is None:
                order -= 1  # nothing this large left; make do with smaller blocks
                continue
            blocks.append((page, order))
            remaining -= 1 << order
        self._owned[vm_id] = blocks
        self.free_pages -= pages
        return VMAllocation(vm_id=vm_id, segments=self._runs(blocks, now))

    def _runs(self, blocks: list[tuple[int, int]], now: int) -> tuple[SegmentDescriptor, ...]:
        spans = sorted((page, page + (1 << order)) for page, order in blocks)
        merged: list[list[int]] = []
        for lo, hi in spans:
            if merged and merged[-1][1] == lo:
                merged[-1][1] = hi
            else:
                merged.append([lo, hi])
        offset = self.start_page * PAGE_SIZE
        return tuple(
            SegmentDescriptor(offset + lo * PAGE_SIZE, offset + hi * PAGE_SIZE, now)
            for lo, hi in merged
        )

    def release(self, vm_id: str) -> None:
        """Free a VM's blocks, coalescing buddies as far as possible."""
        if vm_id not in self._owned:
            raise KeyError(f"vm {vm_id} holds no memory on machine {self.machine_id}")
        for page, order in self._owned.pop(vm_id):
            self.free_pages += 1 << order
            while order < self.max_order:
                buddy = page ^ (1 << order)
                if buddy not in self._sets[order]:
                    break
                self._sets[order].remove(buddy)
                page = min(page, buddy)
                order += 1
            self._push(page, order)

    def owns(self, vm_id: str) -> bool:
        return vm_id in self._owned

    def free_runs(self) -> tuple[tuple[int, int], ...]:
        """Free memory as maximal contiguous (base, limit) byte ranges."""
        spans = sorted(
            (page, page + (1 << order))
            for order, live in enumerate(self._sets)
            for page in live
        )
        merged: list[list[int]] = []
        for lo, hi in spans:
            if merged and merged[-1][1] == lo:
                merged[-1][1] = hi
            else:
                merged.append([lo, hi])
        offset = self.start_page * PAGE_SIZE
        return tuple((offset + lo * PAGE_SIZE, offset + hi * PAGE_SIZE) for lo, hi in merged)


def allocate_baseline(buddy: BuddyAllocator, vm_id: str, demand: int, now: int) -> VMAllocation:
    """Baseline allocation path; see BuddyAllocator.allocate."""
    return buddy.allocate(vm_id, demand, now)
