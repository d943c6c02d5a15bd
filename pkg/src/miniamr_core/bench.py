"""Microbenchmarks: fused vs per-box triad, pooled vs system arena, SoA vs
AoS particle sweep.

Each benchmark cross-checks its outputs against an oracle before timing and
reports medians over repeated runs; timings are direction-only (the paper's
GPU magnitudes are hardware-bound and not targets here).
"""

from __future__ import annotations

import statistics
import time

import numpy as np

from . import config, kernels
from .arena import Arena, SystemArena
from .index_space import Box, IntVect
from .mesh import BoxArray, DistributionMapping, MultiFab, decompose
from .particles import AoSRefTile, ParticleTile, aos_ref_to_soa, soa_to_aos_ref


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_triad(nboxes: int = 512, box_extent: int = 32, scalar: float = 3.0,
                reps: int = 5, backend=None) -> dict:
    """mfa = mfb + scalar * mfc: one fused launch vs one launch per box."""
    backend = backend if backend is not None else kernels.default_backend()
    side = round(nboxes ** (1.0 / config.spacedim))
    while side ** config.spacedim < nboxes:
        side += 1
    domain = Box(IntVect.zero(), IntVect.filled(side * box_extent - 1))
    ba = BoxArray(list(decompose(domain, box_extent))[:nboxes])
    dm = DistributionMapping([0] * len(ba))
    mfa = MultiFab(ba, dm, 1, 0)
    mfb = MultiFab(ba, dm, 1, 0)
    mfc = MultiFab(ba, dm, 1, 0)
    rng = np.random.default_rng(7)
    for gi in mfb.local_indices:
        mfb.fabs[gi].data[...] = rng.random(mfb.fabs[gi].data.shape)
        mfc.fabs[gi].data[...] = rng.random(mfc.fabs[gi].data.shape)

    a = mfa.arrays()
    b = mfb.const_arrays()
    c = mfc.const_arrays()

    def fused():
        kernels.parallel_for_fused(
            backend, mfa,
            lambda box, i, j, k: a[box].__setitem__((i, j, k), b[box][i, j, k] + scalar * c[box][i, j, k]))

    def per_box():
        for bi, gbox in enumerate(mfa.local_boxes()):
            av, bv, cv = a[bi], b[bi], c[bi]
            kernels.parallel_for_box(
                backend, gbox,
                lambda i, j, k: av.__setitem__((i, j, k), bv[i, j, k] + scalar * cv[i, j, k]))

    # correctness cross-check before timing
    c0 = backend.launch_counter
    fused()
    fused_launches = backend.launch_counter - c0
    for gi in mfa.local_indices:
        expect = mfb.fabs[gi].data + scalar * mfc.fabs[gi].data
        if not np.array_equal(mfa.fabs[gi].data, expect):
            raise AssertionError("triad fused result failed the oracle cross-check")
    mfa.setval(0.0)
    c0 = backend.launch_counter
    per_box()
    perbox_launches = backend.launch_counter - c0
    for gi in mfa.local_indices:
        expect = mfb.fabs[gi].data + scalar * mfc.fabs[gi].data
        if not np.array_equal(mfa.fabs[gi].data, expect):
            raise AssertionError("triad per-box result failed the oracle cross-check")

    t_fused = _median_time(fused, reps)
    t_perbox = _median_time(per_box, reps)
    for mf in (mfa, mfb, mfc):
        mf.close()
    return {
        "nboxes": nboxes,
        "cells_per_box": box_extent ** config.spacedim,
        "fused_seconds": t_fused,
        "per_box_seconds": t_perbox,
        "fused_launches": fused_launches,
        "per_box_launches": perbox_launches,
        "speedup": t_perbox / t_fused if t_fused > 0 else float("inf"),
    }


def bench_arena(cycles: int = 10_000, ncells: int = 256 ** 3, reps: int = 5) -> dict:
    """(alloc temp, touch, free) cycles: pooled arena vs system allocator."""
    nbytes = ncells * config.real_dtype.itemsize
    pooled = Arena(nbytes * 2)
    system = SystemArena()

    def cycle(arena) -> None:
        blk = arena.alloc(nbytes)
        arr = blk.as_array(config.real_dtype, ncells)
        arr[0] = 1.0
        arr[-1] = 2.0
        blk.free()

    # warm both paths and verify the blocks actually hold the touched values
    for arena in (pooled, system):
        blk = arena.alloc(nbytes)
        arr = blk.as_array(config.real_dtype, ncells)
        arr[0], arr[-1] = 1.0, 2.0
        assert arr[0] == 1.0 and arr[-1] == 2.0
        blk.free()

    def run_pooled():
        for _ in range(cycles):
            cycle(pooled)

    def run_system():
        for _ in range(cycles):
            cycle(system)

    t_pooled = _median_time(run_pooled, reps)
    t_system = _median_time(run_system, reps)
    return {
        "cycles": cycles,
        "bytes_per_alloc": nbytes,
        "pooled_seconds": t_pooled,
        "system_seconds": t_system,
        "speedup": t_system / t_pooled if t_pooled > 0 else float("inf"),
        "pooled_slab_growths": pooled.stats.slab_growths,
    }


def bench_soa_vs_aos(nparticles: int = 1_000_000, reps: int = 5, backend=None) -> dict:
    """Position-only sweep: contiguous SoA columns vs strided AoS records."""
    backend = backend if backend is not None else kernels.Backend(kernels.CPU_PARALLEL)
    rng = np.random.default_rng(11)
    tile = ParticleTile((), ())
    dim = config.spacedim
    data = {n: rng.random(nparticles) for n in ("x", "y", "z")[:dim]}
    data["id"] = np.arange(nparticles, dtype=np.uint64)
    tile.append(data)
    aos = soa_to_aos_ref(tile)

    soa_cols = [tile.col(n) for n in ("x", "y", "z")[:dim]]
    rec = aos.records
    shift = 1e-9

    def sweep_soa():
        def body(i):
            for col in soa_cols:
                col[i] += shift
        kernels.parallel_for_range(backend, nparticles, body)

    def sweep_aos():
        def body(i):
            for n in ("x", "y", "z")[:dim]:
                rec[n][i] += shift
        kernels.parallel_for_range(backend, nparticles, body)

    # correctness: both layouts see identical updates
    sweep_soa()
    sweep_aos()
    for n in ("x", "y", "z")[:dim]:
        if not np.allclose(tile.col(n), rec[n], rtol=0, atol=1e-12):
            raise AssertionError("SoA and AoS sweeps diverged")

    t_soa = _median_time(sweep_soa, reps)
    t_aos = _median_time(sweep_aos, reps)
    back = aos_ref_to_soa(aos)
    roundtrip_ok = all(np.array_equal(back.col(n), rec[n]) for n in ("x", "y", "z")[:dim])
    back.release()
    tile.release()
    return {
        "nparticles": nparticles,
        "soa_seconds": t_soa,
        "aos_seconds": t_aos,
        "speedup": t_aos / t_soa if t_soa > 0 else float("inf"),
        "roundtrip_ok": roundtrip_ok,
    }


def format_report(name: str, report: dict) -> str:
    lines = [f"[bench {name}]"]
    for k, v in report.items():
        if isinstance(v, float):
            lines.append(f"  {k:>20}: {v:.6g}")
        else:
            lines.append(f"  {k:>20}: {v}")
    return "\n".join(lines)
