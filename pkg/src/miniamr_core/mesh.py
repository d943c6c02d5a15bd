"""Owned mesh storage (Fab), kernel views (FabView), distributed collections.

Storage is Fortran ordered: x fastest, then y, z, component slowest, over
the fab's full (ghost-inclusive) box.  Internally every fab carries three
spatial axes; lower-dimensional builds pad the trailing axes with extent 1,
so kernel bodies always index (i, j, k[, c]) with global indices.
"""

from __future__ import annotations

import itertools
import math
import threading
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import config
from .arena import Arena, Block, the_arena
from .index_space import Box, Geometry, IntVect, empty_box, grow, intersect

_uid_counter = itertools.count(1)
_uid_lock = threading.Lock()


def _next_uid() -> int:
    with _uid_lock:
        return next(_uid_counter)


def _pad3(vals: Sequence[int], fill: int) -> tuple[int, int, int]:
    out = list(int(v) for v in vals)
    while len(out) < 3:
        out.append(fill)
    return tuple(out)


def storage_shape(box: Box, ncomp: int) -> tuple[int, int, int, int]:
    """(nx, ny, nz, ncomp) with trailing size-1 spatial axes below 3D."""
    return _pad3(box.extents, 1) + (int(ncomp),)


class Fab:
    """Multi-component real array over a Box, allocated from an arena."""

    def __init__(self, box: Box, ncomp: int, arena=None):
        if box.is_empty:
            raise ValueError("cannot create a Fab over an empty box")
        if ncomp < 1:
            raise ValueError(f"ncomp must be >= 1, got {ncomp}")
        self.box = box
        self.ncomp = int(ncomp)
        self.arena = arena if arena is not None else the_arena()
        shape = storage_shape(box, ncomp)
        count = math.prod(shape)
        self._block: Block | None = self.arena.alloc(count * config.real_dtype.itemsize)
        flat = self._block.as_array(config.real_dtype, count)
        self.data = flat.reshape(shape, order="F")
        if config.debug:
            flat[:] = config.POISON_REAL

    @property
    def lo3(self) -> tuple[int, int, int]:
        return _pad3(self.box.lo, 0)

    def raw(self) -> np.ndarray:
        """Flat storage in layout order (for layout-law checks and packing)."""
        return self.data.reshape(-1, order="F")

    def view(self, writable: bool = True) -> "FabView":
        return FabView(self.data, self.lo3, self.ncomp, writable)

    def setval(self, value: float, region: Box | None = None, comp_range=None) -> None:
        fab_setval(self, value, region, comp_range)

    def release(self) -> None:
        if self._block is not None:
            self.data = None
            blk, self._block = self._block, None
            blk.free()

    def __del__(self):
        try:
            self.release()
        except Exception:
            pass


def fab_create(box: Box, ncomp: int, arena=None) -> Fab:
    return Fab(box, ncomp, arena)


def _comp_slice(comp_range, ncomp: int) -> slice:
    if comp_range is None:
        return slice(0, ncomp)
    if isinstance(comp_range, int):
        if not 0 <= comp_range < ncomp:
            raise ValueError(f"component {comp_range} out of range [0,{ncomp})")
        return slice(comp_range, comp_range + 1)
    start, stop = comp_range
    if not (0 <= start <= stop <= ncomp):
        raise ValueError(f"component range {comp_range} out of range [0,{ncomp}]")
    return slice(start, stop)


def _region_slices(fab_box: Box, region: Box) -> tuple[slice, slice, slice]:
    lo = _pad3(fab_box.lo, 0)
    rlo = _pad3(region.lo, 0)
    rhi = _pad3(region.hi, 0)
    return tuple(slice(rl - l, rh - l + 1) for l, rl, rh in zip(lo, rlo, rhi))


def fab_setval(f: Fab, value: float, region: Box | None = None, comp_range=None) -> None:
    """Set every element of region x comp_range to value."""
    region = f.box if region is None else region
    if region.is_empty:
        return
    if not f.box.contains(region):
        raise ValueError(f"setval region {region} is not contained in fab box {f.box}")
    sx, sy, sz = _region_slices(f.box, region)
    f.data[sx, sy, sz, _comp_slice(comp_range, f.ncomp)] = value


class FabView:
    """Non-owning, globally indexed accessor over a Fab's storage.

    Valid only while the backing Fab is alive.  Index as view[i, j, k] for
    component 0 or view[i, j, k, c]; lower-dimensional builds may also use
    their natural spatial arity.  Index arguments may be ints or integer
    arrays (broadcast like numpy fancy indexing).
    """

    __slots__ = ("_a", "lo3", "ncomp", "writable")

    def __init__(self, data: np.ndarray, lo3: tuple[int, int, int], ncomp: int, writable: bool):
        a = data if writable else data.view()
        if not writable:
            a.flags.writeable = False
        self._a = a
        self.lo3 = lo3
        self.ncomp = ncomp
        self.writable = writable

    @property
    def array(self) -> np.ndarray:
        """The raw (nx, ny, nz, ncomp) storage view, zero-based indexing."""
        return self._a

    def _locate(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        n = len(idx)
        if n == 4:
            spatial, comp = idx[:3], idx[3]
        elif n == 3:
            spatial, comp = idx, 0
        elif n == config.spacedim:
            spatial, comp = _pad3(idx, 0) if all(isinstance(v, int) for v in idx) else tuple(idx) + (0,) * (3 - n), 0
        else:
            raise IndexError(f"expected (i,j,k[,c]) indices, got {n} entries")
        out = []
        for d, v in enumerate(spatial):
            lo = self.lo3[d]
            if isinstance(v, (int, np.integer)):
                li = int(v) - lo
                if li < 0 or li >= self._a.shape[d]:
                    raise IndexError(f"index {v} out of bounds on axis {d}")
                out.append(li)
            else:
                v = np.asarray(v)
                li = v - lo
                if config.debug and li.size:
                    if int(li.min()) < 0 or int(li.max()) >= self._a.shape[d]:
                        raise IndexError(f"vector index out of bounds on axis {d}")
                out.append(li)
        out.append(comp)
        return tuple(out)

    def __getitem__(self, idx):
        return self._a[self._locate(idx)]

    def __setitem__(self, idx, value):
        self._a[self._locate(idx)] = value


class BoxArray:
    """Ordered list of pairwise-disjoint valid-region boxes of one index type."""

    def __init__(self, boxes: Iterable[Box], ixtype=None):
        boxes = tuple(boxes)
        if not boxes:
            from .index_space import IndexType
            self.boxes = boxes
            self.ixtype = ixtype if ixtype is not None else IndexType.cell()
            self.uid = _next_uid()
            return
        ixt = boxes[0].ixtype
        for b in boxes:
            if b.is_empty:
                raise ValueError("BoxArray boxes must be non-empty")
            if b.ixtype != ixt:
                raise ValueError("BoxArray boxes must share one index type")
        for a, b in itertools.combinations(boxes, 2):
            if not intersect(a, b).is_empty:
                raise ValueError(f"BoxArray valid regions must be disjoint: {a} and {b} overlap")
        self.boxes = boxes
        self.ixtype = ixt
        self.uid = _next_uid()

    def __len__(self) -> int:
        return len(self.boxes)

    def __getitem__(self, i: int) -> Box:
        return self.boxes[i]

    def __iter__(self) -> Iterator[Box]:
        return iter(self.boxes)

    def minimal_extent(self) -> int:
        return min(min(b.extents) for b in self.boxes)


def decompose(domain: Box, max_grid_size) -> BoxArray:
    """Chop a domain into a BoxArray with per-axis extents <= max_grid_size."""
    if isinstance(max_grid_size, int):
        max_grid_size = [max_grid_size] * len(domain.lo)
    cuts = []
    for lo, hi, m in zip(domain.lo, domain.hi, max_grid_size):
        edges = list(range(lo, hi + 1, m)) + [hi + 1]
        cuts.append([(a, b - 1) for a, b in zip(edges[:-1], edges[1:])])
    boxes = []
    for combo in itertools.product(*reversed(cuts)):
        combo = tuple(reversed(combo))
        boxes.append(Box([c[0] for c in combo], [c[1] for c in combo], domain.ixtype))
    return BoxArray(boxes)


class DistributionMapping:
    """One owning rank id per BoxArray entry."""

    def __init__(self, rank_of: Iterable[int], nranks: int | None = None):
        self.rank_of = tuple(int(r) for r in rank_of)
        top = (max(self.rank_of) + 1) if self.rank_of else 1
        self.nranks = int(nranks) if nranks is not None else top
        if any(r < 0 or r >= self.nranks for r in self.rank_of):
            raise ValueError("rank ids must lie in [0, nranks)")
        self.uid = _next_uid()

    @staticmethod
    def round_robin(nboxes: int, nranks: int) -> "DistributionMapping":
        return DistributionMapping([i % nranks for i in range(nboxes)], nranks)

    def __len__(self) -> int:
        return len(self.rank_of)

    def __getitem__(self, i: int) -> int:
        return self.rank_of[i]


class MultiFab:
    """Distributed collection of Fabs: BoxArray + DistributionMapping + ghosts."""

    def __init__(self, ba: BoxArray, dm: DistributionMapping, ncomp: int, ngrow,
                 geom: Geometry | None = None, arena=None, rank: int | None = None):
        if len(ba) == 0:
            raise ValueError("MultiFab needs a non-empty BoxArray")
        if len(dm) != len(ba):
            raise ValueError(f"distribution mapping length {len(dm)} != boxarray length {len(ba)}")
        from . import comm  # late import: comm depends on mesh types
        self.ba = ba
        self.dm = dm
        self.ncomp = int(ncomp)
        self.ngrow = ngrow if isinstance(ngrow, IntVect) else IntVect.filled(ngrow)
        if any(g < 0 for g in self.ngrow):
            raise ValueError("ngrow components must be >= 0")
        self.geom = geom
        self.arena = arena if arena is not None else the_arena()
        self.rank = comm.current_rank() if rank is None else rank
        self.local_indices = tuple(i for i, r in enumerate(dm.rank_of) if r == self.rank)
        self.fabs = {i: Fab(grow(ba[i], self.ngrow), self.ncomp, self.arena)
                     for i in self.local_indices}
        self.plan_cache: dict = {}
        self.plan_builds = 0

    def valid_box(self, i: int) -> Box:
        return self.ba[i]

    def grown_box(self, i: int) -> Box:
        return grow(self.ba[i], self.ngrow)

    def fab(self, i: int) -> Fab:
        if i not in self.fabs:
            raise KeyError(f"fab {i} is not owned by rank {self.rank}")
        return self.fabs[i]

    def view(self, i: int) -> FabView:
        return self.fab(i).view(writable=True)

    def const_view(self, i: int) -> FabView:
        return self.fab(i).view(writable=False)

    def arrays(self) -> list[FabView]:
        """Writable views of the local fabs, in local iteration order."""
        return [self.view(i) for i in self.local_indices]

    def const_arrays(self) -> list[FabView]:
        return [self.const_view(i) for i in self.local_indices]

    def local_boxes(self, grown: bool = False) -> list[Box]:
        return [self.grown_box(i) if grown else self.ba[i] for i in self.local_indices]

    def setval(self, value: float, comp_range=None, grown: bool = True) -> None:
        for i in self.local_indices:
            region = self.grown_box(i) if grown else self.ba[i]
            self.fabs[i].setval(value, region, comp_range)

    def close(self) -> None:
        for f in self.fabs.values():
            f.release()
        self.fabs = {}


def multifab_define(ba: BoxArray, dm: DistributionMapping, ncomp: int, ngrow,
                    geom: Geometry | None = None, arena=None) -> MultiFab:
    return MultiFab(ba, dm, ncomp, ngrow, geom, arena)


def fab_view(mf: MultiFab, fab_index: int) -> FabView:
    """Writable view over the grown box of a locally owned fab."""
    return mf.view(fab_index)


def const_fab_view(mf: MultiFab, fab_index: int) -> FabView:
    return mf.const_view(fab_index)


DEFAULT_TILE_SIZE_X = 1024000  # never split the unit-stride axis by default

_tile_size_override: tuple[int, ...] | None = None


def set_default_tile_size(ts) -> None:
    """Override the default MFIter tile size (inputs key `tile_size`)."""
    global _tile_size_override
    _tile_size_override = None if ts is None else tuple(int(v) for v in ts)


def default_tile_size() -> IntVect:
    if _tile_size_override is not None and len(_tile_size_override) == config.spacedim:
        return IntVect(*_tile_size_override)
    comps = [DEFAULT_TILE_SIZE_X] + [8] * (config.spacedim - 1)
    return IntVect(*comps)


def tiles_of_box(box: Box, tile_size) -> list[Box]:
    """Partition a box into disjoint tiles of at most tile_size per axis.

    Tiles have exactly tile_size extent except the last tile per axis, which
    takes the remainder.
    """
    if box.is_empty:
        return []
    ts = tile_size if isinstance(tile_size, IntVect) else IntVect.filled(tile_size)
    if any(t < 1 for t in ts):
        raise ValueError(f"tile sizes must be >= 1, got {ts}")
    per_axis = []
    for lo, hi, t in zip(box.lo, box.hi, ts):
        edges = list(range(lo, hi + 1, t)) + [hi + 1]
        per_axis.append([(a, b - 1) for a, b in zip(edges[:-1], edges[1:])])
    tiles = []
    for combo in itertools.product(*reversed(per_axis)):
        combo = tuple(reversed(combo))
        tiles.append(Box([c[0] for c in combo], [c[1] for c in combo], box.ixtype))
    return tiles


def mfiter_tiles(mf: MultiFab, tile_size=None, include_ghost: bool = False):
    """Yield (fab_index, tile box) pairs partitioning each local fab."""
    ts = tile_size if tile_size is not None else default_tile_size()
    for i in mf.local_indices:
        base = mf.grown_box(i) if include_ghost else mf.ba[i]
        for t in tiles_of_box(base, ts):
            yield i, t


class MFIterItem:
    __slots__ = ("mf", "index", "_tile")

    def __init__(self, mf: MultiFab, index: int, tile: Box):
        self.mf = mf
        self.index = index
        self._tile = tile

    def tilebox(self) -> Box:
        return self._tile

    def validbox(self) -> Box:
        return self.mf.ba[self.index]

    def fabbox(self) -> Box:
        return self.mf.grown_box(self.index)


class MFIter:
    """Iterates the locally owned fabs, optionally subdivided into tiles."""

    def __init__(self, mf: MultiFab, tiling=False, include_ghost: bool = False):
        self.mf = mf
        if tiling is False or tiling is None:
            self._items = [MFIterItem(mf, i, mf.grown_box(i) if include_ghost else mf.ba[i])
                           for i in mf.local_indices]
        else:
            ts = default_tile_size() if tiling is True else tiling
            self._items = [MFIterItem(mf, i, t) for i, t in mfiter_tiles(mf, ts, include_ghost)]

    def __iter__(self) -> Iterator[MFIterItem]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)
