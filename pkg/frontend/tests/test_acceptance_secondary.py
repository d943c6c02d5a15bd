"""Secondary acceptance: zero-copy round trip, order duality, particle
column writes, zero-allocation view creation.  Prints one line per check."""

import numpy as np

import miniamr as amr
from miniamr import array_view, multifab_iter, particle_iter
from miniamr_core import config
from miniamr_core.arena import Arena
from miniamr_core.mesh import decompose


def report(name, ok, detail=""):
    print(f"[ACCEPTANCE/secondary] {name}: {'PASS' if ok else 'FAIL'}"
          + (f"  ({detail})" if detail else ""))
    assert ok, name


def test_secondary_zero_copy_round_trip():
    config.set_spacedim(2)
    arena = Arena(1 << 22)
    dom = amr.Box((0, 0), (15, 15))
    ba = decompose(dom, 8)
    mf = amr.multifab_define(ba, amr.DistributionMapping([0] * len(ba)), 1, 0,
                             arena=arena)
    mf.setval(0.0)

    stats_before = (arena.stats.reserved_bytes, arena.stats.in_use_bytes)
    for mfi in multifab_iter(mf):
        field = mfi.array_view().to_host_array(copy=False)
        field[()] = 42.0
    stats_after = (arena.stats.reserved_bytes, arena.stats.in_use_bytes)

    arrays = mf.const_arrays()
    n = dom.num_pts
    got = amr.parallel_reduce_mixed(amr.Backend("serial"), mf,
                                    [amr.SUM, amr.MIN, amr.MAX],
                                    lambda bi, i, j, k: (arrays[bi][i, j, k],) * 3)
    report("zero-copy write + native mixed reduce",
           got == (42.0 * n, 42.0, 42.0), f"reduce={got}, N={n}")
    report("view creation changes arena stats by zero bytes",
           stats_before == stats_after, f"{stats_before} == {stats_after}")


def test_secondary_order_duality_ramp():
    config.set_spacedim(3)
    fab = amr.Fab(amr.Box((0, 0, 0), (4, 3, 2)), 2)
    fab.data[...] = np.arange(fab.data.size, dtype=float).reshape(fab.data.shape, order="F")
    v = array_view(fab)
    f = v.to_host_array("F", copy=False)
    c = v.to_host_array("C", copy=False)
    same_bytes = f.__array_interface__["data"][0] == c.__array_interface__["data"][0]
    dual = all(f[x, y, z, comp] == c[comp, z, y, x]
               for x in range(5) for y in range(4) for z in range(3) for comp in range(2))
    report("order duality F/C on a ramp fab", dual and same_bytes,
           f"dual={dual}, shared storage={same_bytes}")


def test_secondary_particle_column_writes():
    config.set_spacedim(3)
    dom = amr.Box((0, 0, 0), (7, 7, 7))
    geom = amr.Geometry(dom, (0, 0, 0), (1, 1, 1), (True, True, True))
    ba = decompose(dom, 8)
    pc = amr.ParticleContainer([(ba, amr.DistributionMapping([0]), geom)])
    rng = np.random.default_rng(1)
    pc.add_particles(rng.random((64, 3)))
    for pti in particle_iter(pc, level=0):
        soa = pti.soa()
        soa.real["x"][:] = 0.30
        soa.real["y"][:] = 0.35
        soa.real["z"][:] = 0.40
    ok = True
    for _, tile in pc.par_iter_tiles():
        ok &= bool((tile.col("x") == 0.30).all())
        ok &= bool((tile.col("y") == 0.35).all())
        ok &= bool((tile.col("z") == 0.40).all())
    report("particle column writes 0.30/0.35/0.40 read back natively", ok)
