import random

import pytest

from dsegsim import (
    BuddyAllocator,
    InsufficientMemoryError,
    InvalidSizeError,
    PAGE_SIZE,
    allocate_baseline,
)
from oracle import BitmapOracle

GIB = 1 << 30
MIB = 1 << 20


class TestBuddyBasics:
    def test_first_allocation_on_empty_machine_is_contiguous(self):
        buddy = BuddyAllocator(16 * GIB)
        alloc = allocate_baseline(buddy, "vm", 4 * MIB, 0)
        assert alloc.k == 1
        assert alloc.total_bytes == 4 * MIB

    def test_zero_demand_rejected(self):
        with pytest.raises(InvalidSizeError):
            allocate_baseline(BuddyAllocator(GIB), "vm", 0, 0)

    def test_insufficient_memory_is_atomic(self):
        buddy = BuddyAllocator(64 * PAGE_SIZE)
        before = buddy.free_bytes
        with pytest.raises(InsufficientMemoryError):
            allocate_baseline(buddy, "vm", 65 * PAGE_SIZE, 0)
        assert buddy.free_bytes == before

    def test_sub_page_demand_rounds_up_to_one_page(self):
        buddy = BuddyAllocator(GIB)
        alloc = allocate_baseline(buddy, "vm", 100, 0)
        assert alloc.total_bytes == PAGE_SIZE

    def test_release_restores_free_bytes(self):
        buddy = BuddyAllocator(GIB)
        allocate_baseline(buddy, "vm", 37 * PAGE_SIZE, 0)
        buddy.release("vm")
        assert buddy.free_bytes == GIB
        assert buddy.free_runs() == ((0, GIB),)

    def test_reserved_region_excluded(self):
        buddy = BuddyAllocator(GIB, reserved_bytes=256 * PAGE_SIZE)
        assert buddy.free_bytes == GIB - 256 * PAGE_SIZE
        alloc = allocate_baseline(buddy, "vm", GIB - 256 * PAGE_SIZE, 0)
        assert alloc.segments[0].base == 256 * PAGE_SIZE
        assert alloc.segments[-1].limit == GIB

    def test_unknown_release_rejected(self):
        with pytest.raises(KeyError):
            BuddyAllocator(GIB).release("ghost")


class TestFragmentation:
    def test_interleaved_frees_force_multiple_runs(self):
        # Carve A..D back to back, free the 2nd and 4th, then ask for their
        # combined size: the grant must come as two separate runs.
        buddy = BuddyAllocator(256 * PAGE_SIZE, max_order=4)
        oracle = BitmapOracle(256 * PAGE_SIZE)
        chunk = 16 * PAGE_SIZE
        for name in ("a", "b", "c", "d"):
            oracle.mark_allocated(allocate_baseline(buddy, name, chunk, 0).segments)
        holes = {}
        for name in ("b", "d"):
            holes[name] = buddy._owned[name]
            buddy.release(name)
        oracle.mark_released(
            [s for name in ("b", "d") for s in _block_segments(buddy, holes[name])]
        )
        alloc = allocate_baseline(buddy, "e", 2 * chunk, 0)
        oracle.mark_allocated(alloc.segments)
        assert alloc.k == 2
        assert [s.base for s in alloc.segments] == [chunk, 3 * chunk]

    def test_bitmap_oracle_equivalence_under_random_churn(self):
        rng = random.Random(5)
        total = 4096 * PAGE_SIZE
        buddy = BuddyAllocator(total, max_order=6)
        oracle = BitmapOracle(total)
        live = {}
        for step in range(400):
            if live and rng.random() < 0.45:
                vm = rng.choice(sorted(live))
                buddy.release(vm)
                oracle.mark_released(live.pop(vm).segments)
            else:
                pages = rng.randint(1, 128)
                vm = f"vm{step}"
                if pages > buddy.free_pages:
                    with pytest.raises(InsufficientMemoryError):
                        allocate_baseline(buddy, vm, pages * PAGE_SIZE, step)
                    continue
                alloc = allocate_baseline(buddy, vm, pages * PAGE_SIZE, step)
                live[vm] = alloc
                oracle.mark_allocated(alloc.segments)
            assert buddy.free_bytes == oracle.free_pages * PAGE_SIZE
            oracle.assert_matches_runs(buddy.free_runs())
        for vm in sorted(live):
            buddy.release(vm)
            oracle.mark_released(live[vm].segments)
        assert buddy.free_runs() == ((0, total),)


def _block_segments(buddy, blocks):
    from dsegsim import SegmentDescriptor

    offset = buddy.start_page * PAGE_SIZE
    return [
        SegmentDescriptor(
            offset + page * PAGE_SIZE, offset + (page + (1 << order)) * PAGE_SIZE
        )
        for page, order in blocks
    ]


class TestOddRegions:
    def test_non_power_of_two_region_fully_usable(self):
        pages = 1000  # decomposes into 512+256+128+64+32+8 blocks
        buddy = BuddyAllocator(pages * PAGE_SIZE, max_order=9)
        alloc = allocate_baseline(buddy, "vm", pages * PAGE_SIZE, 0)
        assert alloc.total_bytes == pages * PAGE_SIZE
        assert alloc.k == 1  # blocks are adjacent, so they merge into one run
        buddy.release("vm")
        assert buddy.free_runs() == ((0, pages * PAGE_SIZE),)
