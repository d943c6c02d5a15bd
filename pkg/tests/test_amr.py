import math

import numpy as np
import pytest

from conftest import fill_from_global
from miniamr_core import config
from miniamr_core.amr import (LINEAR, PIECEWISE_CONSTANT, AmrMesh, TagField,
                              average_down, fill_patch, interp_box, regrid)
from miniamr_core.comm import fill_boundary
from miniamr_core.index_space import (Box, Geometry, IntVect, boxes_cover, coarsen,
                                      grow, intersect, refine)
from miniamr_core.kernels import Backend
from miniamr_core.mesh import (BoxArray, DistributionMapping, Fab, MultiFab,
                               decompose, multifab_define, _region_slices)


def make_mesh(n=32, dim=2, max_level=1, periodic=True, **kw):
    config.set_spacedim(dim)
    return AmrMesh([n] * dim, [0.0] * dim, [1.0] * dim, [periodic] * dim,
                   max_level=max_level, **kw)


def test_regrid_no_tags_empty():
    mesh = make_mesh()
    ba = regrid(mesh, 0, TagField(mesh, 0))
    assert len(ba) == 0


def test_regrid_single_tagged_cell():
    mesh = make_mesh(n=32, blocking_factor=8, ref_ratio=2)
    tags = TagField(mesh, 0)
    tags.tag_box(Box((9, 21), (9, 21)))
    ba = regrid(mesh, 0, tags)
    assert len(ba) == 1
    b = ba[0]
    assert b.extents == (8, 8)  # one blocking-factor chunk, refined
    assert b.contains(refine(Box((9, 21), (9, 21)), 2))
    assert all(l % 8 == 0 for l in b.lo)


def test_regrid_full_domain():
    mesh = make_mesh(n=16, max_grid_size=16)
    tags = TagField(mesh, 0)
    tags.tag_box(mesh.geom(0).domain)
    ba = regrid(mesh, 0, tags)
    assert boxes_cover(list(ba), refine(mesh.geom(0).domain, 2))
    assert sum(b.num_pts for b in ba) == 32 * 32


def test_regrid_covers_tags_and_respects_limits():
    mesh = make_mesh(n=64, blocking_factor=8, max_grid_size=16)
    tags = TagField(mesh, 0)
    tags.tag_box(Box((5, 5), (20, 9)))
    ba = regrid(mesh, 0, tags)
    cov = [coarsen(b, 2) for b in ba]
    assert boxes_cover(cov, Box((5, 5), (20, 9)))
    for b in ba:
        assert all(e % 8 == 0 for e in b.extents)
        assert all(e <= 16 for e in b.extents)


def test_regrid_rejects_out_of_domain_tags():
    mesh = make_mesh(n=16)
    tags = TagField(mesh, 0)
    with pytest.raises(ValueError):
        tags.tag_box(Box((40, 40), (41, 41)))


def test_regrid_beyond_max_level():
    mesh = make_mesh(max_level=0)
    with pytest.raises(ValueError):
        regrid(mesh, 0, TagField(mesh, 0))


def two_level_fabs(serial, fine_boxes, n=16, ncomp=1, fine_ngrow=0, seed=0, dim=2):
    config.set_spacedim(dim)
    dom = Box([0] * dim, [n - 1] * dim)
    geom = Geometry(dom, [0.0] * dim, [1.0] * dim, [True] * dim)
    cba = decompose(dom, n // 2)
    cdm = DistributionMapping([0] * len(cba))
    coarse = multifab_define(cba, cdm, ncomp, 1, geom)
    rng = np.random.default_rng(seed)
    gdata = rng.random([n] * dim)
    fill_from_global(coarse, gdata, cba)
    fba = BoxArray(fine_boxes)
    fdm = DistributionMapping([0] * len(fba))
    fine = multifab_define(fba, fdm, ncomp, fine_ngrow, geom.refined(2))
    return coarse, fine, geom, gdata


def test_average_down_constant(serial):
    config.set_spacedim(2)
    coarse, fine, geom, _ = two_level_fabs(serial, [Box((4, 4), (11, 11))])
    fine.setval(5.0)
    coarse.setval(0.0, grown=False)
    average_down(fine, coarse, 2, serial)
    cov = coarsen(fine.ba[0], 2)
    for gi in coarse.local_indices:
        sect = intersect(coarse.ba[gi], cov)
        if sect.is_empty:
            continue
        fab = coarse.fabs[gi]
        assert (fab.data[_region_slices(fab.box, sect)] == 5.0).all()


def test_average_down_1d_mean():
    config.set_spacedim(1)
    serial = Backend("serial")
    geom = Geometry(Box((0,), (7,)), (0.0,), (1.0,), (True,))
    coarse = multifab_define(BoxArray([Box((0,), (7,))]), DistributionMapping([0]), 1, 0, geom)
    fine = multifab_define(BoxArray([Box((0,), (3,))]), DistributionMapping([0]), 1, 0,
                           geom.refined(2))
    v = fine.view(0)
    v[0], v[1], v[2], v[3] = 1.0, 3.0, 10.0, 20.0
    coarse.setval(-1.0)
    average_down(fine, coarse, 2, serial)
    cv = coarse.view(0)
    assert cv[0] == 2.0 and cv[1] == 15.0
    assert cv[2] == -1.0  # uncovered coarse cells unchanged


def test_average_down_sum_conservation(serial):
    config.set_spacedim(2)
    rng = np.random.default_rng(8)
    coarse, fine, geom, _ = two_level_fabs(serial, [Box((2, 4), (9, 11)), Box((10, 4), (13, 7))])
    for gi in fine.local_indices:
        fine.fabs[gi].data[...] = rng.random(fine.fabs[gi].data.shape)
    average_down(fine, coarse, 2, serial)
    fine_sum = sum(float(fine.fabs[gi].data.sum()) for gi in fine.local_indices)
    coarse_sum = 0.0
    cov = [coarsen(b, 2) for b in fine.ba]
    for gi in coarse.local_indices:
        fab = coarse.fabs[gi]
        for cb in cov:
            sect = intersect(coarse.ba[gi], cb)
            if not sect.is_empty:
                coarse_sum += float(fab.data[_region_slices(fab.box, sect)].sum())
    assert abs(coarse_sum * 4 - fine_sum) <= 1e-12 * abs(fine_sum)


def test_average_down_ratio_mismatch(serial):
    config.set_spacedim(2)
    coarse, fine, geom, _ = two_level_fabs(serial, [Box((4, 4), (11, 11))])
    with pytest.raises(ValueError):
        average_down(fine, coarse, 3, serial)


def test_interp_constant_both_schemes():
    config.set_spacedim(2)
    cfab = Fab(Box((0, 0), (7, 7)), 1)
    cfab.data[...] = 4.5
    for scheme in (PIECEWISE_CONSTANT, LINEAR):
        ffab = Fab(Box((2, 2), (13, 13)), 1)
        interp_box(cfab, ffab, ffab.box, 2, scheme)
        assert (ffab.data == 4.5).all()


def test_interp_linear_1d_quarter_offsets():
    config.set_spacedim(1)
    cfab = Fab(Box((-1,), (8,)), 1)
    for i in range(-1, 9):
        cfab.view()[i] = float(i)
    ffab = Fab(Box((0,), (15,)), 1)
    interp_box(cfab, ffab, ffab.box, 2, LINEAR)
    v = ffab.view()
    for parent in range(8):
        assert v[2 * parent] == pytest.approx(parent - 0.25, abs=1e-14)
        assert v[2 * parent + 1] == pytest.approx(parent + 0.25, abs=1e-14)


def test_interp_linear_reproduces_linear_fields_exactly():
    config.set_spacedim(2)
    cfab = Fab(Box((-1, -1), (8, 8)), 1)
    a, b, c = 0.7, -1.3, 0.25
    for cell in cfab.box.cells():
        cfab.view()[cell[0], cell[1]] = a * (cell[0] + 0.5) + b * (cell[1] + 0.5) + c
    ffab = Fab(Box((0, 0), (15, 15)), 1)
    interp_box(cfab, ffab, ffab.box, 2, LINEAR)
    g = ffab.view()
    for cell in ffab.box.cells():
        # fine cell centers sit at (i+0.5)/2 in coarse index coordinates
        exact = a * ((cell[0] + 0.5) / 2) + b * ((cell[1] + 0.5) / 2) + c
        assert abs(g[cell[0], cell[1]] - exact) <= 1e-12


def test_average_down_of_interp_is_identity(serial):
    rng = np.random.default_rng(9)
    for scheme in (PIECEWISE_CONSTANT, LINEAR):
        config.set_spacedim(2)
        cfab = Fab(Box((-1, -1), (8, 8)), 1)
        cfab.data[...] = rng.random(cfab.data.shape)
        ffab = Fab(Box((0, 0), (15, 15)), 1)
        interp_box(cfab, ffab, ffab.box, 2, scheme)
        # mean over each 2x2 family of children must equal the parent
        kids = ffab.data[:, :, 0, 0]
        mean = 0.25 * (kids[0::2, 0::2] + kids[1::2, 0::2] + kids[0::2, 1::2] + kids[1::2, 1::2])
        parents = cfab.data[1:9, 1:9, 0, 0]
        assert np.abs(mean - parents).max() <= 1e-13


def test_interp_insufficient_coarse_data():
    config.set_spacedim(1)
    cfab = Fab(Box((0,), (7,)), 1)
    ffab = Fab(Box((0,), (15,)), 1)
    with pytest.raises(ValueError):
        interp_box(cfab, ffab, ffab.box, 2, LINEAR)  # needs cells -1 and 8


def fill_patch_oracle(coarse_g, fine_mf, fine_geom, ratio, scheme, coarse_fab_full):
    """Global-array oracle: interpolate everywhere, overwrite with fine valid
    data (periodic wrap), then read the ghosts."""
    dim = coarse_g.ndim
    fext = [e * ratio for e in coarse_g.shape]
    fine_full = Fab(Box([0] * dim, [e - 1 for e in fext]), 1)
    interp_box(coarse_fab_full, fine_full, fine_full.box, ratio, scheme)
    gfine = fine_full.data[..., 0].reshape(fext)
    for gi in range(len(fine_mf.ba)):
        b = fine_mf.ba[gi]
        fab = fine_mf.fabs[gi]
        gfine[tuple(slice(b.lo[d], b.hi[d] + 1) for d in range(dim))] = \
            fab.data[_region_slices(fab.box, b) + (0,)].reshape(b.extents)
    return gfine


def test_fill_patch_fully_refined_is_pure_fill_boundary(serial):
    config.set_spacedim(2)
    dom = Box((0, 0), (15, 15))
    geom = Geometry(dom, (0, 0), (1, 1), (True, True))
    cba = decompose(dom, 8)
    coarse = multifab_define(cba, DistributionMapping([0] * len(cba)), 1, 1, geom)
    fdom = refine(dom, 2)
    fgeom = geom.refined(2)
    fba = decompose(fdom, 16)
    rng = np.random.default_rng(10)
    fine1 = multifab_define(fba, DistributionMapping([0] * len(fba)), 1, 1, fgeom)
    fine2 = multifab_define(fba, DistributionMapping([0] * len(fba)), 1, 1, fgeom)
    gdata = rng.random((32, 32))
    fill_from_global(fine1, gdata, fba)
    fill_from_global(fine2, gdata, fba)
    coarse.setval(99.0)
    fill_patch(fine1, coarse, fgeom, geom, 2, LINEAR, backend=serial)
    fill_boundary(fine2, fgeom, backend=serial)
    for gi in fine1.local_indices:
        assert np.array_equal(fine1.fabs[gi].data, fine2.fabs[gi].data)


def test_fill_patch_interior_patch_all_ghosts_interpolated(serial):
    config.set_spacedim(2)
    coarse, fine, geom, gdata = two_level_fabs(serial, [Box((8, 8), (15, 15))],
                                               n=16, fine_ngrow=1, seed=11)
    fgeom = geom.refined(2)
    rng = np.random.default_rng(12)
    for gi in fine.local_indices:
        fab = fine.fabs[gi]
        fab.data[...] = -50.0
        fab.data[_region_slices(fab.box, fine.ba[gi])] = \
            rng.random(fab.data[_region_slices(fab.box, fine.ba[gi])].shape)
    fill_patch(fine, coarse, fgeom, geom, 2, LINEAR, backend=serial)
    # oracle
    cfull = Fab(grow(geom.domain, 1), 1)
    wrapped = np.pad(gdata, 1, mode="wrap")
    cfull.data[:, :, 0, 0] = wrapped
    gfine = fill_patch_oracle(gdata, fine, fgeom, 2, LINEAR, cfull)
    fab = fine.fabs[0]
    g = grow(fine.ba[0], 1)
    got = fab.data[:, :, 0, 0]
    expect = gfine[tuple(slice(g.lo[d], g.hi[d] + 1) for d in range(2))]
    assert np.allclose(got, expect, rtol=0, atol=1e-13)


def test_fill_patch_mixed_random_configs(serial):
    config.set_spacedim(2)
    rng = np.random.default_rng(13)
    for trial in range(4):
        n = 16
        fine_candidates = [Box((0, 0), (15, 7)), Box((8, 8), (23, 15)),
                           Box((16, 16), (31, 31)), Box((0, 16), (7, 23))]
        picks = rng.choice(4, size=int(rng.integers(1, 4)), replace=False)
        boxes = [fine_candidates[int(p)] for p in sorted(picks)]
        coarse, fine, geom, gdata = two_level_fabs(serial, boxes, n=n,
                                                   fine_ngrow=1, seed=20 + trial)
        fgeom = geom.refined(2)
        for gi in fine.local_indices:
            fab = fine.fabs[gi]
            fab.data[...] = 0.0
            sl = _region_slices(fab.box, fine.ba[gi])
            fab.data[sl] = rng.random(fab.data[sl].shape)
        snapshot = {gi: fine.fabs[gi].data.copy() for gi in fine.local_indices}
        fill_patch(fine, coarse, fgeom, geom, 2, LINEAR, backend=serial)
        cfull = Fab(grow(geom.domain, 1), 1)
        cfull.data[:, :, 0, 0] = np.pad(gdata, 1, mode="wrap")
        gfine = fill_patch_oracle(gdata, fine, fgeom, 2, LINEAR, cfull)
        gext = gfine.shape
        for gi in fine.local_indices:
            fab = fine.fabs[gi]
            gbox = grow(fine.ba[gi], 1)
            got = fab.data[:, :, 0, 0]
            idx = np.ix_(*(np.arange(gbox.lo[d], gbox.hi[d] + 1) % gext[d] for d in range(2)))
            assert np.allclose(got, gfine[idx], rtol=0, atol=1e-13)
            # valid cells untouched
            sl = _region_slices(fab.box, fine.ba[gi])
            assert np.array_equal(fab.data[sl], snapshot[gi][sl])


def test_amr_mesh_validation():
    with pytest.raises(ValueError):
        make_mesh(blocking_factor=7, ref_ratio=2)
    with pytest.raises(ValueError):
        make_mesh(max_grid_size=12, blocking_factor=8)
    mesh = make_mesh(n=32)
    assert mesh.geom(0).domain.extents == (32, 32)
    tags = TagField(mesh, 0)
    tags.tag_box(Box((8, 8), (11, 11)))
    ba = regrid(mesh, 0, tags)
    mesh.set_level(1, ba)
    assert mesh.finest_level == 1
    assert mesh.geom(1).domain == refine(mesh.geom(0).domain, 2)
