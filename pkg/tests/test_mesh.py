import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miniamr_core import config
from miniamr_core.arena import Arena
from miniamr_core.index_space import Box, Geometry, IntVect, grow, intersect
from miniamr_core.mesh import (BoxArray, DistributionMapping, Fab, MFIter, MultiFab,
                               decompose, fab_create, fab_setval, mfiter_tiles,
                               multifab_define, tiles_of_box)


def test_fab_create_examples():
    config.set_spacedim(1)
    f = fab_create(Box((0,), (7,)), 1)
    assert f.data.size == 8
    config.set_spacedim(2)
    f2 = fab_create(Box((0, 0), (3, 3)), 2)
    assert f2.data.size == 32
    with pytest.raises(ValueError):
        fab_create(Box((0, 0), (-1, -1)), 1)


def test_fab_create_debug_poison():
    config.set_debug(True)
    f = fab_create(Box((0, 0, 0), (3, 3, 3)), 1)
    assert np.isnan(f.data).all()


def test_fab_setval_examples():
    config.set_spacedim(2)
    f = fab_create(Box((0, 0), (3, 3)), 2)
    fab_setval(f, 42.0)
    assert (f.data == 42.0).all()
    from miniamr_core.index_space import empty_box
    fab_setval(f, 9.0, empty_box())  # no-op
    assert (f.data == 42.0).all()
    fab_setval(f, 1.0, comp_range=1)
    assert (f.data[..., 0] == 42.0).all() and (f.data[..., 1] == 1.0).all()
    with pytest.raises(ValueError):
        fab_setval(f, 0.0, Box((0, 0), (5, 5)))


def test_multifab_define_round_robin_ownership():
    config.set_spacedim(1)
    ba = BoxArray([Box((i * 4,), (i * 4 + 3,)) for i in range(4)])
    dm = DistributionMapping.round_robin(4, 2)
    mf = MultiFab(ba, dm, 1, 0, rank=0)
    assert mf.local_indices == (0, 2)
    mf1 = MultiFab(ba, dm, 1, 0, rank=1)
    assert mf1.local_indices == (1, 3)
    with pytest.raises(ValueError):
        MultiFab(ba, DistributionMapping([0]), 1, 0)


def test_multifab_ngrow():
    config.set_spacedim(1)
    ba = BoxArray([Box((0,), (3,))])
    dm = DistributionMapping([0])
    mf0 = multifab_define(ba, dm, 1, 0)
    assert mf0.fabs[0].box == ba[0]
    mf1 = multifab_define(ba, dm, 1, 1)
    assert mf1.fabs[0].box == Box((-1,), (4,))


def test_fortran_layout_law():
    config.set_spacedim(3)
    box = Box((-1, 2, 0), (2, 4, 1))  # extents 4, 3, 2
    f = fab_create(box, 2)
    ex = box.extents
    v = f.view()
    for c in range(2):
        for k in range(box.lo[2], box.hi[2] + 1):
            for j in range(box.lo[1], box.hi[1] + 1):
                for i in range(box.lo[0], box.hi[0] + 1):
                    off = (i - box.lo[0]) + ex[0] * ((j - box.lo[1]) + ex[1] * ((k - box.lo[2]) + ex[2] * c))
                    v[i, j, k, c] = float(off)
    raw = f.raw()
    assert np.array_equal(raw, np.arange(raw.size, dtype=float))


def test_view_global_indexing_and_const():
    config.set_spacedim(2)
    ba = BoxArray([Box((0, 0), (3, 3))])
    mf = multifab_define(ba, DistributionMapping([0]), 1, 1)
    mf.setval(7.0)
    v = mf.view(0)
    assert v[0, 0] == 7.0
    assert v.lo3[:2] == tuple(grow(ba[0], 1).lo)
    cv = mf.const_view(0)
    with pytest.raises(ValueError):
        cv[0, 0] = 1.0
    with pytest.raises(KeyError):
        mf.view(1)


def test_view_scalar_bounds_checked():
    config.set_spacedim(1)
    f = fab_create(Box((0,), (3,)), 1)
    v = f.view()
    with pytest.raises(IndexError):
        v[4]
    with pytest.raises(IndexError):
        v[-1]


def test_tiles_examples():
    config.set_spacedim(3)
    tiles = tiles_of_box(Box((0, 0, 0), (15, 15, 15)), IntVect(8, 8, 8))
    assert len(tiles) == 8
    assert sum(t.num_pts for t in tiles) == 16 ** 3
    config.set_spacedim(1)
    tiles = tiles_of_box(Box((0,), (9,)), IntVect(4))
    assert [(t.lo[0], t.hi[0]) for t in tiles] == [(0, 3), (4, 7), (8, 9)]
    tiles = tiles_of_box(Box((0,), (9,)), IntVect(100))
    assert len(tiles) == 1 and tiles[0] == Box((0,), (9,))


@given(st.data())
@settings(max_examples=80, deadline=None)
def test_tiling_partition_property(data):
    config.set_spacedim(3)
    lo = tuple(data.draw(st.integers(-6, 6)) for _ in range(3))
    ext = tuple(data.draw(st.integers(1, 12)) for _ in range(3))
    box = Box(lo, tuple(l + e - 1 for l, e in zip(lo, ext)))
    ts = IntVect(*(data.draw(st.integers(1, 6)) for _ in range(3)))
    tiles = tiles_of_box(box, ts)
    assert sum(t.num_pts for t in tiles) == box.num_pts
    for n, t in enumerate(tiles):
        assert box.contains(t)
        assert all(e <= s for e, s in zip(t.extents, ts))
        for q in tiles[n + 1:]:
            assert intersect(t, q).is_empty


def test_mfiter_tiles_and_ghost_option():
    config.set_spacedim(2)
    ba = decompose(Box((0, 0), (15, 15)), 8)
    mf = multifab_define(ba, DistributionMapping([0] * len(ba)), 1, 1)
    items = list(mfiter_tiles(mf, IntVect(8, 8)))
    assert len(items) == len(ba)
    grown = list(mfiter_tiles(mf, IntVect(100, 100), include_ghost=True))
    assert all(t == mf.grown_box(i) for i, t in grown)
    it = MFIter(mf, tiling=IntVect(4, 4))
    assert sum(item.tilebox().num_pts for item in it) == 16 * 16
    assert {item.validbox() for item in MFIter(mf)} == set(ba.boxes)


def test_arena_roundtrip_on_release():
    config.set_spacedim(2)
    arena = Arena(1 << 16)
    f = Fab(Box((0, 0), (7, 7)), 1, arena)
    used = arena.stats.in_use_bytes
    assert used >= 64 * 8
    f.release()
    assert arena.stats.in_use_bytes == 0
    f.release()  # idempotent


def test_setval_sum_through_reduce():
    # setval then sum over region == value * num_pts(region) * |comp_range|
    from miniamr_core.kernels import SUM, Backend, reduce_box
    config.set_spacedim(2)
    ba = BoxArray([Box((0, 0), (7, 7))])
    mf = multifab_define(ba, DistributionMapping([0]), 3, 1)
    mf.setval(0.0)
    region = Box((2, 3), (5, 6))
    fab_setval(mf.fabs[0], 1.5, region, comp_range=(1, 3))
    v = mf.const_view(0)
    serial = Backend("serial")
    total = 0.0
    for c in range(1, 3):
        (s,) = reduce_box(serial, region, [SUM], lambda i, j, k, c=c: (v[i, j, k, c],))
        total += s
    assert total == 1.5 * region.num_pts * 2
    (zero,) = reduce_box(serial, region, [SUM], lambda i, j, k: (v[i, j, k, 0],))
    assert zero == 0.0
