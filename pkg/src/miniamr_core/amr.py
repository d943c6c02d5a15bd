"""Two-level-and-beyond mesh hierarchy operations.

Level creation covers tagged cells with blocking-factor-aligned chunks
(simple deterministic chunk-cover, not Berger-Rigoutsos); transfers between
levels are conservative averaging down and piecewise-constant or unlimited
linear interpolation up; fill_patch composes same-level exchange with
interpolation from the coarse level.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import comm, config, kernels
from .index_space import (Box, Geometry, IntVect, box_diff, box_list_diff,
                          boxes_cover, coarsen, grow, intersect, refine)
from .mesh import (BoxArray, DistributionMapping, Fab, MultiFab, _pad3,
                   _region_slices, decompose)

PIECEWISE_CONSTANT = "piecewise_constant"
LINEAR = "linear"


class AmrMesh:
    """Mesh hierarchy: per-level Geometry/BoxArray/DistributionMapping.

    Level domains satisfy domain[l] == refine(domain[l-1], ref_ratio); fine
    boxes, coarsened, must stay inside the coarser level's union with a
    one-coarse-cell nesting buffer.
    """

    def __init__(self, n_cell, prob_lo, prob_hi, periodic, max_level: int = 1,
                 ref_ratio: int = 2, blocking_factor: int = 8, max_grid_size: int = 32,
                 nranks: int | None = None):
        self.max_level = int(max_level)
        self.ref_ratio = int(ref_ratio)
        self.blocking_factor = int(blocking_factor)
        self.max_grid_size = int(max_grid_size)
        if self.ref_ratio < 2:
            raise ValueError("ref_ratio must be >= 2")
        if self.blocking_factor % self.ref_ratio != 0:
            raise ValueError("blocking_factor must be divisible by ref_ratio")
        if self.max_grid_size % self.blocking_factor != 0:
            raise ValueError("max_grid_size must be a multiple of blocking_factor")
        n_cell = tuple(int(v) for v in n_cell)
        cf = self.blocking_factor // self.ref_ratio
        if any(n % cf for n in n_cell):
            raise ValueError("n_cell must be divisible by blocking_factor/ref_ratio")
        domain = Box(IntVect.zero(), IntVect(*n_cell) - 1)
        self.nranks = nranks if nranks is not None else comm.current_ctx().nranks
        self.geoms = [Geometry(domain, prob_lo, prob_hi, periodic)]
        self.grids = [decompose(domain, self.max_grid_size)]
        self.dmaps = [DistributionMapping.round_robin(len(self.grids[0]), self.nranks)]

    @property
    def finest_level(self) -> int:
        return len(self.grids) - 1

    def geom(self, level: int) -> Geometry:
        return self.geoms[level]

    def boxarray(self, level: int) -> BoxArray:
        return self.grids[level]

    def dmap(self, level: int) -> DistributionMapping:
        return self.dmaps[level]

    def set_level(self, level: int, ba: BoxArray,
                  dm: DistributionMapping | None = None) -> None:
        """Install (or replace) a refined level's grids."""
        if level < 1 or level > self.max_level:
            raise ValueError(f"level {level} outside (0, max_level={self.max_level}]")
        if level > len(self.grids):
            raise ValueError(f"cannot install level {level}: level {level - 1} missing")
        if dm is None:
            dm = DistributionMapping.round_robin(len(ba), self.nranks)
        geom = self.geoms[level - 1].refined(self.ref_ratio)
        if level == len(self.grids):
            self.grids.append(ba)
            self.dmaps.append(dm)
            self.geoms.append(geom)
        else:
            self.grids[level] = ba
            self.dmaps[level] = dm
            self.geoms[level] = geom

    def level_tuples(self):
        """(ba, dm, geom) triples for the particle container."""
        return [(self.grids[l], self.dmaps[l], self.geoms[l]) for l in range(len(self.grids))]


class TagField:
    """One byte per cell (TAGGED/CLEAR) over a level's locally owned grids."""

    TAGGED = 1
    CLEAR = 0

    def __init__(self, mesh: AmrMesh, level: int):
        self.mesh = mesh
        self.level = level
        ba, dm = mesh.boxarray(level), mesh.dmap(level)
        me = comm.current_rank()
        self.arrays = {
            gi: np.zeros(_pad3(ba[gi].extents, 1), dtype=np.uint8, order="F")
            for gi in range(len(ba)) if dm[gi] == me
        }

    def tag_box(self, region: Box) -> None:
        ba = self.mesh.boxarray(self.level)
        if not intersect(region, self.mesh.geom(self.level).domain).ok and region.ok:
            raise ValueError(f"tags outside the level domain: {region}")
        for gi, arr in self.arrays.items():
            sect = intersect(ba[gi], region)
            if sect.is_empty:
                continue
            arr[_region_slices(ba[gi], sect)] = self.TAGGED

    def tag_where(self, gi: int, mask: np.ndarray) -> None:
        self.arrays[gi][mask] = self.TAGGED

    def tagged_cells(self, gi: int) -> np.ndarray:
        """(n, spacedim) global coordinates of this grid's tagged cells."""
        arr = self.arrays[gi]
        idx = np.nonzero(arr)
        lo = _pad3(self.mesh.boxarray(self.level)[gi].lo, 0)
        cols = [idx[d] + lo[d] for d in range(config.spacedim)]
        return np.stack(cols, axis=1) if cols[0].size else np.empty((0, config.spacedim), dtype=np.int64)


def _allgather(ctx, obj) -> list:
    """Collect one python object per rank (slot exchange, no bus messages)."""
    if ctx.nranks == 1:
        return [obj]
    bus = ctx.bus
    if not hasattr(bus, "_ag_slots"):
        bus._ag_slots = [None] * ctx.nranks
    bus._ag_slots[ctx.rank] = obj
    ctx.barrier()
    out = list(bus._ag_slots)
    ctx.barrier()
    return out


def regrid(mesh: AmrMesh, level: int, tags: TagField) -> BoxArray:
    """Chunk-cover grid generation for level+1 from tagged level cells.

    Tagged cells are snapped to blocking-factor-aligned chunks; x-adjacent
    chunks merge into runs, runs are split to max_grid_size, and the result
    is refined.  Returned boxes, coarsened, cover every tagged cell.
    """
    if level >= mesh.max_level:
        raise ValueError(f"cannot regrid beyond max_level={mesh.max_level}")
    if tags.level != level:
        raise ValueError("tag field belongs to a different level")
    ctx = comm.current_ctx()
    dom = mesh.geom(level).domain
    cf = mesh.blocking_factor // mesh.ref_ratio  # chunk size in level-l cells

    local = [tags.tagged_cells(gi) for gi in sorted(tags.arrays)]
    local_cells = np.concatenate(local) if local else np.empty((0, config.spacedim), dtype=np.int64)
    gathered = _allgather(ctx, local_cells)
    cells = np.concatenate([g for g in gathered]) if gathered else local_cells
    if cells.size == 0:
        return BoxArray([], ixtype=dom.ixtype)
    lo = np.array([dom.lo[d] for d in range(config.spacedim)])
    hi = np.array([dom.hi[d] for d in range(config.spacedim)])
    if (cells < lo).any() or (cells > hi).any():
        raise ValueError("tagged cells outside the level domain")

    chunks = np.unique((cells - lo) // cf, axis=0)
    # merge chunk runs along x (chunks sorted lexicographically, x last in key)
    order = np.lexsort(tuple(chunks[:, d] for d in range(config.spacedim)))
    chunks = chunks[order]
    runs: list[tuple[np.ndarray, int]] = []
    start = 0
    for n in range(1, len(chunks) + 1):
        is_break = n == len(chunks) or (chunks[n, 1:] != chunks[n - 1, 1:]).any() \
            or chunks[n, 0] != chunks[n - 1, 0] + 1
        if is_break:
            runs.append((chunks[start], int(chunks[n - 1, 0] - chunks[start, 0]) + 1))
            start = n
    coarse_boxes = []
    for head, nx in runs:
        blo = lo + head * cf
        bhi = blo + cf - 1
        bhi[0] = blo[0] + nx * cf - 1
        coarse_boxes.append(Box(IntVect(*blo), IntVect(*bhi)))

    fine_boxes = []
    for cb in coarse_boxes:
        fb = refine(cb, mesh.ref_ratio)
        for piece in _split_to(fb, mesh.max_grid_size):
            fine_boxes.append(piece)
    fine_boxes.sort(key=lambda b: b.lo.comps)
    ba = BoxArray(fine_boxes)

    level_union = list(mesh.boxarray(level))
    geom = mesh.geom(level)
    for fb in fine_boxes:
        buffered = grow(coarsen(fb, mesh.ref_ratio), 1)
        # nesting is only required inside the domain; periodic axes wrap
        for img, _ in _domain_images(buffered, geom):
            if not boxes_cover(level_union, img):
                raise ValueError(f"regrid violates proper nesting near {fb}")
    return ba


def _split_to(box: Box, max_extent: int) -> list[Box]:
    per_axis = []
    for lo, hi in zip(box.lo, box.hi):
        edges = list(range(lo, hi + 1, max_extent)) + [hi + 1]
        per_axis.append([(a, b - 1) for a, b in zip(edges[:-1], edges[1:])])
    out = []
    for combo in itertools.product(*reversed(per_axis)):
        combo = tuple(reversed(combo))
        out.append(Box([c[0] for c in combo], [c[1] for c in combo], box.ixtype))
    return out


def _domain_images(b: Box, geom: Geometry) -> list[tuple[Box, IntVect]]:
    """Portions of b inside the domain after periodic wrapping (non-periodic
    axes clip); used for nesting and coverage checks."""
    out = []
    for s in comm._shift_candidates(b, geom.domain, geom):
        img = intersect(b.shift(s), geom.domain)
        if not img.is_empty:
            out.append((img, s))
    return out


def average_down(fine: MultiFab, coarse: MultiFab, ratio: int, backend=None) -> None:
    """Covered coarse cells become the mean of their ratio^D fine children."""
    ratio = int(ratio)
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    for b in fine.ba:
        if any(e % ratio for e in b.extents) or any(l % ratio for l in b.lo):
            raise ValueError(f"fine box {b} is not aligned to ratio {ratio}")
    if fine.ncomp != coarse.ncomp:
        raise ValueError("component count mismatch")
    crse_ba = BoxArray([coarsen(b, ratio) for b in fine.ba])
    tmp = MultiFab(crse_ba, fine.dm, fine.ncomp, 0, arena=fine.arena)
    locals_ = list(fine.local_indices)

    rpow = ratio ** config.spacedim

    def avg_one(n: int) -> None:
        gi = locals_[n]
        fdat = fine.fabs[gi].data[_region_slices(fine.fabs[gi].box, fine.ba[gi])]
        acc = None
        offs = _pad3([ratio] * config.spacedim, 1)
        for oz in range(offs[2]):
            for oy in range(offs[1]):
                for ox in range(offs[0]):
                    part = fdat[ox::ratio, oy::ratio if offs[1] > 1 else 1,
                                oz::ratio if offs[2] > 1 else 1]
                    acc = part.copy() if acc is None else acc + part
        tmp.fabs[gi].data[...] = acc / rpow

    kernels.fused_segments(backend, len(locals_), avg_one)
    comm.parallel_copy(coarse, tmp, backend=backend)
    tmp.close()


def interp_box(coarse_fab: Fab, fine_fab: Fab, fine_region: Box, ratio: int,
               scheme: str = PIECEWISE_CONSTANT) -> None:
    """Fill fine_region of fine_fab from coarse_fab data (local operation).

    LINEAR uses unlimited centered slopes, so globally linear coarse data is
    reproduced exactly at fine cell centers; it needs one extra coarse cell
    around the coarsened region, else this raises.
    """
    if fine_region.is_empty:
        return
    ratio = int(ratio)
    if not fine_fab.box.contains(fine_region):
        raise ValueError("fine_region must lie inside the fine fab")
    creg = coarsen(fine_region, ratio)
    need = grow(creg, 1) if scheme == LINEAR else creg
    if not coarse_fab.box.contains(need):
        raise ValueError(
            f"insufficient coarse data: need {need} inside {coarse_fab.box}")
    if scheme not in (PIECEWISE_CONSTANT, LINEAR):
        raise ValueError(f"unknown interpolation scheme {scheme!r}")

    clo = _pad3(coarse_fab.box.lo, 0)
    flo = _pad3(fine_fab.box.lo, 0)
    rlo, rhi = _pad3(fine_region.lo, 0), _pad3(fine_region.hi, 0)
    ratios = _pad3([ratio] * config.spacedim, 1)

    fine_idx = [np.arange(rlo[d], rhi[d] + 1, dtype=np.int64) for d in range(3)]
    parent = [fi // r for fi, r in zip(fine_idx, ratios)]
    parent_loc = [p - c for p, c in zip(parent, clo)]
    dst = tuple(np.s_[rlo[d] - flo[d]: rhi[d] - flo[d] + 1] for d in range(3))

    vals = coarse_fab.data[np.ix_(*parent_loc, np.arange(coarse_fab.ncomp))]
    if scheme == LINEAR:
        vals = vals.copy()
        for d in range(config.spacedim):
            up = [parent_loc[0], parent_loc[1], parent_loc[2]]
            dn = [parent_loc[0], parent_loc[1], parent_loc[2]]
            up[d] = parent_loc[d] + 1
            dn[d] = parent_loc[d] - 1
            slope = 0.5 * (coarse_fab.data[np.ix_(*up, np.arange(coarse_fab.ncomp))]
                           - coarse_fab.data[np.ix_(*dn, np.arange(coarse_fab.ncomp))])
            off = (np.mod(fine_idx[d], ratios[d]) + 0.5) / ratios[d] - 0.5
            shape = [1, 1, 1, 1]
            shape[d] = off.size
            vals += slope * off.reshape(shape)
    fine_fab.data[dst] = vals


def interp_coarse_to_fine(coarse_fab: Fab, fine_fab: Fab, fine_region: Box,
                          ratio: int, scheme: str = PIECEWISE_CONSTANT) -> None:
    interp_box(coarse_fab, fine_fab, fine_region, ratio, scheme)


def _same_level_sources(ba: BoxArray, geom: Geometry) -> list[Box]:
    """Valid boxes plus their periodic images (ghost-coverage candidates)."""
    out = []
    reach = IntVect.filled(max(g for g in geom.period))
    for b in ba:
        out.append(b)
        for s in comm._shift_candidates(b, grow(geom.domain, reach), geom):
            if any(v != 0 for v in s):
                out.append(b.shift(s))
    return out


def _coarse_fill_targets(fine_ba: BoxArray, ngrow: IntVect, geom: Geometry) -> dict[int, list[Box]]:
    """Per fine fab: ghost boxes not coverable by same-level valid data."""
    sources = _same_level_sources(fine_ba, geom)
    # non-periodic axes cannot be covered outside the domain at all
    clip_lo, clip_hi = [], []
    big = max(geom.period) + max(ngrow) + 1
    for d in range(config.spacedim):
        clip_lo.append(geom.domain.lo[d] - (big if geom.periodic[d] else 0))
        clip_hi.append(geom.domain.hi[d] + (big if geom.periodic[d] else 0))
    clip = Box(clip_lo, clip_hi)
    out: dict[int, list[Box]] = {}
    for gi, b in enumerate(fine_ba):
        ghost = box_diff(grow(b, ngrow), b)
        rest = box_list_diff(ghost, sources)
        rest = [intersect(r, clip) for r in rest]
        rest = [r for r in rest if not r.is_empty]
        if rest:
            out[gi] = rest
    return out


def fill_patch(fine: MultiFab, coarse: MultiFab, fine_geom: Geometry,
               coarse_geom: Geometry, ratio: int, scheme: str = LINEAR,
               backend=None) -> None:
    """Fill fine ghost cells: same-level data where available, interpolated
    coarse data elsewhere; valid cells are never modified."""
    comm.fill_boundary(fine, fine_geom, backend=backend)
    reach = 1 if scheme == LINEAR else 0
    key = comm.PlanKey(coarse.ba.uid, coarse.dm.uid, fine.ba.uid, fine.dm.uid,
                       (reach,) * len(fine.ngrow), fine.ngrow.comps,
                       fine.ba.ixtype.flags, fine_geom.periodic, "fill_patch")
    cached = fine.plan_cache.get(key)
    if cached is None:
        targets = _coarse_fill_targets(fine.ba, fine.ngrow, fine_geom)
        gather_list = []
        dst_ranks = []
        for gi in sorted(targets):
            cbox = grow(coarsen(grow(fine.ba[gi], fine.ngrow), ratio), reach)
            gather_list.append((gi, cbox))
            dst_ranks.append(fine.dm[gi])
        plan = comm.build_gather_plan(gather_list, dst_ranks, coarse, coarse_geom) \
            if gather_list else None
        cached = (targets, gather_list, dst_ranks, plan)
        fine.plan_cache[key] = cached
        fine.plan_builds += 1
    targets, gather_list, dst_ranks, plan = cached
    if not targets:
        return
    me = comm.current_rank()
    owned = {gi: Fab(cbox, fine.ncomp, fine.arena)
             for gi, cbox in gather_list if fine.dm[gi] == me}
    comm.gather_fabs(gather_list, dst_ranks, owned, coarse, coarse_geom,
                     backend=backend, plan=plan)

    jobs = [(gi, region) for gi in sorted(targets) if gi in owned
            for region in targets[gi]]

    def interp_one(n: int) -> None:
        gi, region = jobs[n]
        interp_box(owned[gi], fine.fabs[gi], region, ratio, scheme)

    kernels.fused_segments(backend, len(jobs), interp_one)
    for f in owned.values():
        f.release()
