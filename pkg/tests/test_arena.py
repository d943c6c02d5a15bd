import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miniamr_core import config
from miniamr_core.arena import (Arena, AsyncArena, SystemArena, arena_init,
                                async_scope)
from miniamr_core.kernels import Backend


def test_init_examples():
    a = arena_init(1 << 20)
    assert a.stats.reserved_bytes == 1 << 20
    assert a.stats.in_use_bytes == 0 and a.stats.alloc_calls == 0
    lazy = arena_init(0)
    assert lazy.stats.reserved_bytes == 0
    blk = lazy.alloc(100)
    assert lazy.stats.slab_growths == 1 and lazy.stats.reserved_bytes > 0
    blk.free()
    b = arena_init(1 << 20)
    b.alloc(512)
    assert a.stats.in_use_bytes == 0  # arenas are independent


def test_alloc_free_reuse_no_growth():
    a = Arena(1 << 20)
    blk = a.alloc(1024)
    reserved = a.stats.reserved_bytes
    growths = a.stats.slab_growths
    blk.free()
    blk2 = a.alloc(1024)
    assert a.stats.reserved_bytes == reserved
    assert a.stats.slab_growths == growths
    blk2.free()


def test_alloc_beyond_capacity_grows_slab():
    a = Arena(1 << 10)
    g0 = a.stats.slab_growths
    blk = a.alloc(1 << 20)
    assert a.stats.slab_growths == g0 + 1
    blk.free()


def test_alignment():
    a = Arena(1 << 16)
    for align in (8, 64, 256):
        blk = a.alloc(100, align)
        assert blk.address % align == 0
        blk.free()
    with pytest.raises(ValueError):
        a.alloc(8, 3)


def test_zero_byte_block():
    a = Arena(1 << 10)
    blk = a.alloc(0)
    assert blk.is_null
    blk.free()  # no-op
    assert a.stats.in_use_bytes == 0


def test_double_free_detected():
    a = Arena(1 << 10)
    blk = a.alloc(64)
    blk.free()
    with pytest.raises(RuntimeError):
        a.free(blk)


@given(st.lists(st.tuples(st.integers(1, 4096), st.booleans()), min_size=1, max_size=60))
@settings(max_examples=60, deadline=None)
def test_conservation_invariant(ops):
    a = Arena(1 << 16)
    live = []
    expected = 0
    for size, do_free in ops:
        blk = a.alloc(size)
        live.append(blk)
        expected += blk.padded
        assert a.stats.in_use_bytes == expected
        if do_free and live:
            victim = live.pop()
            expected -= victim.padded
            victim.free()
            assert a.stats.in_use_bytes == expected
    for blk in live:
        blk.free()
    assert a.stats.in_use_bytes == 0


def test_async_scope_defers_recycle_until_task_done():
    aa = AsyncArena()
    be = Backend("parallel", 2)
    release_gate = threading.Event()
    seen = {}

    def body():
        blk = aa.alloc(256)
        arr = blk.as_array(np.float64, 32)
        arr[:] = 123.0

        def task():
            release_gate.wait(timeout=5)
            seen["ok"] = bool((arr == 123.0).all())
        be.submit_async(task)
        blk.free()

    async_scope(aa, body)
    # scope exited but the task has not run: the block must still be held
    assert aa.deferred_blocks == 1
    assert aa.stats.in_use_bytes > 0
    release_gate.set()
    be.drain_async()
    assert seen["ok"]
    assert aa.deferred_blocks == 0
    assert aa.stats.in_use_bytes == 0
    assert aa.early_recycles == 0


def test_scope_without_tasks_recycles_immediately():
    aa = AsyncArena()

    def body():
        aa.alloc(512).free()

    async_scope(aa, body)
    assert aa.deferred_blocks == 0
    assert aa.stats.in_use_bytes == 0
    # identical-size realloc reuses the block: no growth
    g = aa.stats.slab_growths
    blk = aa.alloc(512)
    assert aa.stats.slab_growths == g
    blk.free()


def test_nested_scopes_stress():
    aa = AsyncArena()
    be = Backend("parallel", 2)
    rng = np.random.default_rng(17)
    bad = []

    def one(depth: int):
        def body():
            blk = aa.alloc(int(rng.integers(64, 512)))
            n = blk.nbytes // 8
            arr = blk.as_array(np.float64, n)
            canary = float(rng.random())
            arr[:] = canary

            def task(a=arr, c=canary, d=float(rng.random()) * 1e-4):
                time.sleep(d)
                if not (a == c).all():
                    bad.append(1)
            be.submit_async(task)
            if depth > 0:
                one(depth - 1)
            blk.free()
        async_scope(aa, body)

    for _ in range(100):
        one(int(rng.integers(0, 3)))
    be.drain_async()
    assert not bad
    assert aa.early_recycles == 0
    assert aa.deferred_blocks == 0
    assert aa.stats.in_use_bytes == 0


def test_system_arena_roundtrip():
    sa = SystemArena()
    blk = sa.alloc(1 << 12)
    arr = blk.as_array(np.uint8, 1 << 12)
    arr[:] = 7
    assert blk.address % 64 == 0
    blk.free()
    assert sa.stats.in_use_bytes == 0
    with pytest.raises(RuntimeError):
        sa.free(blk)
