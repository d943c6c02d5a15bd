import numpy as np
import pytest

import miniamr as amr
from miniamr import (BoundArray4, array_view, multifab_iter, particle_iter,
                     particle_soa_view)
from miniamr_core import config
from miniamr_core.arena import Arena


def make_mf(ncomp=1, ngrow=0, extent=8, split=4, dim=2, arena=None):
    config.set_spacedim(dim)
    from miniamr_core.mesh import decompose
    dom = amr.Box([0] * dim, [extent - 1] * dim)
    ba = decompose(dom, split)
    dm = amr.DistributionMapping([0] * len(ba))
    return amr.multifab_define(ba, dm, ncomp, ngrow, arena=arena)


def test_register_types_surface():
    m = amr.register_types()
    assert m is amr
    b = m.Box((0, 0, 0), (3, 3, 3))
    assert b.num_pts == 64
    assert b.intersects(m.Box((2, 2, 2), (5, 5, 5)))
    assert b.ok
    with pytest.raises(AttributeError):
        b.ok = False  # read-only property
    assert m.IntVect(1, 2, 3) + m.IntVect(1, 1, 1) == m.IntVect(2, 3, 4)


def test_bound_array_shape_and_strides_2d_two_comps():
    config.set_spacedim(2)
    fab = amr.Fab(amr.Box((0, 0), (3, 3)), 2)
    view = array_view(fab)
    assert view.shape == (4, 4, 1, 2)
    assert view.strides == (8, 32, 128, 128)
    assert view.typestr == "<f8"
    ai = view.__array_interface__
    assert ai["version"] == 3
    assert ai["data"][0] == view.address and ai["data"][1] is False


def test_zero_copy_mutation_visible_natively(serial_backend=None):
    config.set_spacedim(2)
    mf = make_mf(ncomp=1, extent=8, split=4)
    mf.setval(0.0)
    for mfi in multifab_iter(mf):
        field = mfi.array_view().to_host_array(copy=False)
        field[()] = 42.0
    arrays = mf.const_arrays()
    got = amr.parallel_reduce_mixed(amr.Backend("serial"), mf, [amr.SUM, amr.MIN, amr.MAX],
                                    lambda bi, i, j, k: (arrays[bi][i, j, k],) * 3)
    n = 8 * 8
    assert got == (42.0 * n, 42.0, 42.0)


def test_native_mutation_visible_through_view():
    config.set_spacedim(2)
    fab = amr.Fab(amr.Box((0, 0), (1, 1)), 1)
    view = array_view(fab).to_host_array(copy=False)
    fab.view()[1, 1] = 5.5  # native global write
    assert view[1, 1, 0, 0] == 5.5


def test_copy_true_is_independent():
    config.set_spacedim(2)
    fab = amr.Fab(amr.Box((0, 0), (3, 3)), 1)
    fab.data[...] = 1.0
    dup = array_view(fab).to_host_array(copy=True)
    dup[...] = -7.0
    assert (fab.data == 1.0).all()
    dup_c = array_view(fab).to_host_array(order="C", copy=True)
    assert dup_c.shape == (1, 1, 4, 4) and dup_c.flags.c_contiguous
    dup_c[...] = -9.0
    assert (fab.data == 1.0).all()


def test_const_view_is_read_only():
    config.set_spacedim(2)
    mf = make_mf()
    bound = BoundArray4(mf.const_view(mf.local_indices[0]))
    arr = np.asarray(bound)
    assert not arr.flags.writeable
    with pytest.raises(ValueError):
        arr[0, 0, 0, 0] = 1.0


def test_order_duality_on_ramp():
    config.set_spacedim(3)
    fab = amr.Fab(amr.Box((0, 0, 0), (3, 2, 1)), 2)
    ramp = np.arange(fab.data.size, dtype=float).reshape(fab.data.shape, order="F")
    fab.data[...] = ramp
    view = array_view(fab)
    f = view.to_host_array(order="F", copy=False)
    c = view.to_host_array(order="C", copy=False)
    assert f.base is not None and c.base is not None  # views, not copies
    for x in range(4):
        for y in range(3):
            for z in range(2):
                for comp in range(2):
                    assert f[x, y, z, comp] == c[comp, z, y, x]


def test_view_creation_allocates_nothing():
    arena = Arena(1 << 20)
    config.set_spacedim(2)
    mf = make_mf(arena=arena)
    before = (arena.stats.reserved_bytes, arena.stats.in_use_bytes, arena.stats.alloc_calls)
    views = [mfi.array_view().to_host_array(copy=False) for mfi in multifab_iter(mf)]
    after = (arena.stats.reserved_bytes, arena.stats.in_use_bytes, arena.stats.alloc_calls)
    assert before == after
    assert views[0].__array_interface__["data"][0] == \
        mf.fab(mf.local_indices[0]).data.__array_interface__["data"][0]


def test_multifab_iter_counts_and_boxes():
    config.set_spacedim(2)
    mf = make_mf(ngrow=2)
    seen = list(multifab_iter(mf))
    assert len(seen) == len(mf.local_indices)
    for mfi in seen:
        ngv = mfi.n_grow_vect
        assert mfi.tilebox().grow(ngv) == mf.grown_box(mfi.index)
        # zero-based local indexing vs native global indexing
        native = mf.view(mfi.index)
        arr = mfi.array_view().to_host_array(copy=False)
        g = mf.grown_box(mfi.index)
        native[g.lo[0], g.lo[1]] = 3.75
        assert arr[0, 0, 0, 0] == 3.75


def test_multifab_iter_detects_structure_change():
    config.set_spacedim(2)
    mf = make_mf()
    with pytest.raises(RuntimeError):
        for n, mfi in enumerate(multifab_iter(mf)):
            if n == 0:
                mf.close()


def make_pc(n=32, dim=3):
    config.set_spacedim(dim)
    from miniamr_core.mesh import decompose
    dom = amr.Box([0] * dim, [7] * dim)
    geom = amr.Geometry(dom, [0.0] * dim, [1.0] * dim, [True] * dim)
    ba = decompose(dom, 8)
    dm = amr.DistributionMapping([0] * len(ba))
    pc = amr.ParticleContainer([(ba, dm, geom)], real_names=("a", "b"),
                               int_names=("flag", "tag"))
    rng = np.random.default_rng(3)
    pc.add_particles(rng.random((n, dim)))
    return pc


def test_particle_soa_listing_values():
    pc = make_pc()
    for pti in particle_iter(pc, level=0):
        soa = pti.soa().to_numpy()
        x = soa.real["x"]
        y = soa.real["y"]
        x[:] = 0.30
        y[:] = 0.35
        soa.real["z"][:] = 0.40
        soa.real["a"][:] = x[:] ** 2
        soa.real["b"][:] = x[:] + y[:]
        for soa_int in soa.int.values():
            soa_int[:] = 12
    for _, tile in pc.par_iter_tiles():
        assert (tile.col("x") == 0.30).all()
        assert (tile.col("y") == 0.35).all()
        assert (tile.col("z") == 0.40).all()
        assert np.allclose(tile.col("a"), 0.09)
        assert np.allclose(tile.col("b"), 0.65)
        assert (tile.col("flag") == 12).all() and (tile.col("tag") == 12).all()


def test_particle_soa_unknown_column():
    pc = make_pc()
    soa = particle_soa_view(next(t for _, t in pc.par_iter_tiles()))
    with pytest.raises(KeyError):
        soa.real["nope"]
    with pytest.raises(KeyError):
        soa.int["x"]  # positions are not int columns
    assert soa.id.dtype == np.uint64


def test_particle_columns_zero_copy():
    pc = make_pc(n=16)
    tile = [t for _, t in pc.par_iter_tiles()][0]
    soa = particle_soa_view(tile)
    col = soa.real["x"]
    assert col.__array_interface__["data"][0] == tile.col("x").__array_interface__["data"][0]
    col[0] = 0.123456
    assert tile.col("x")[0] == 0.123456
