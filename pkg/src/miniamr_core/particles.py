"""Pure struct-of-arrays particle containers.

Particles are binned to (level, grid, tile) by position; storage is
columnar: SPACEDIM position columns, a packed 64-bit id column, and named
runtime real/int columns, each contiguous per tile.  The packed id word
reserves bit 63 for validity, bits 62-24 for the per-rank local id and
bits 23-0 for the originating rank, giving 2^39 local ids on 2^24 ranks.
(The legacy AoS layout treated any id > 0 as valid; this pure-SoA word uses
the explicit flag bit instead.)  A minimal AoS reference container exists
only for the layout benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import comm, config, kernels
from .arena import the_arena
from .index_space import Box, Geometry, IntVect
from .mesh import BoxArray, DistributionMapping, _pad3, tiles_of_box

RANK_BITS = 24
LOCAL_BITS = 39
MAX_RANKS = 1 << RANK_BITS          # ~16.7e6
MAX_LOCAL_ID = 1 << LOCAL_BITS      # ~5.5e11

_VALID_BIT = np.uint64(1) << np.uint64(63)
_RANK_MASK = np.uint64(MAX_RANKS - 1)
_LOCAL_MASK = np.uint64(MAX_LOCAL_ID - 1)
_RANK_SHIFT = np.uint64(0)
_LOCAL_SHIFT = np.uint64(RANK_BITS)


def id_encode(rank: int, local_id: int, valid: bool = True) -> int:
    """Pack (rank, local id, validity) into the 64-bit id word."""
    if not 0 <= rank < MAX_RANKS:
        raise ValueError(f"rank {rank} exceeds the {RANK_BITS}-bit rank field")
    if not 0 <= local_id < MAX_LOCAL_ID:
        raise ValueError(f"local id {local_id} exceeds the {LOCAL_BITS}-bit id field")
    word = (local_id << RANK_BITS) | rank
    if valid:
        word |= 1 << 63
    return word


def id_decode(word) -> tuple[int, int, bool]:
    word = int(word)
    return (word & (MAX_RANKS - 1),
            (word >> RANK_BITS) & (MAX_LOCAL_ID - 1),
            bool(word >> 63))


def id_encode_array(rank: int, local_ids: np.ndarray, valid: bool = True) -> np.ndarray:
    if local_ids.size and int(local_ids.max()) >= MAX_LOCAL_ID:
        raise ValueError("local id exceeds the id field")
    if not 0 <= rank < MAX_RANKS:
        raise ValueError(f"rank {rank} exceeds the rank field")
    words = (local_ids.astype(np.uint64) << _LOCAL_SHIFT) | np.uint64(rank)
    if valid:
        words |= _VALID_BIT
    return words


def ids_valid(words: np.ndarray) -> np.ndarray:
    return (words & _VALID_BIT) != 0


def ids_invalidate(words: np.ndarray, where) -> None:
    """Clear the validity bit in place; rank and local id stay intact."""
    words[where] &= ~_VALID_BIT


class _Column:
    """Arena-backed growable column; the live view is always contiguous."""

    __slots__ = ("arena", "dtype", "block", "capacity")

    def __init__(self, dtype, arena):
        self.arena = arena
        self.dtype = np.dtype(dtype)
        self.block = None
        self.capacity = 0

    def ensure(self, n: int) -> None:
        if n <= self.capacity:
            return
        cap = max(16, 1 << (n - 1).bit_length())
        blk = self.arena.alloc(cap * self.dtype.itemsize)
        if self.block is not None:
            old = self.block.as_array(self.dtype, self.capacity)
            blk.as_array(self.dtype, cap)[: self.capacity] = old
            self.block.free()
        self.block = blk
        self.capacity = cap

    def view(self, count: int) -> np.ndarray:
        if self.block is None:
            return np.empty(0, dtype=self.dtype)
        return self.block.as_array(self.dtype, self.capacity)[:count]

    def release(self) -> None:
        if self.block is not None:
            self.block.free()
            self.block = None
            self.capacity = 0


POSITION_NAMES = ("x", "y", "z")


class ParticleTile:
    """Columnar particle storage for one (level, grid, tile)."""

    def __init__(self, real_names, int_names, arena=None):
        self.arena = arena if arena is not None else the_arena()
        self.real_names = tuple(real_names)
        self.int_names = tuple(int_names)
        self.count = 0
        rd = config.real_dtype
        self._cols: dict[str, _Column] = {}
        for name in POSITION_NAMES[: config.spacedim]:
            self._cols[name] = _Column(rd, self.arena)
        self._cols["id"] = _Column(np.uint64, self.arena)
        for name in self.real_names:
            self._cols[name] = _Column(rd, self.arena)
        for name in self.int_names:
            self._cols[name] = _Column(np.int64, self.arena)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(self._cols)

    def col(self, name: str) -> np.ndarray:
        if name not in self._cols:
            raise KeyError(f"unregistered particle component {name!r}")
        return self._cols[name].view(self.count)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.col(name)

    @property
    def ids(self) -> np.ndarray:
        return self.col("id")

    def positions(self) -> np.ndarray:
        """(count, spacedim) copy of the position columns."""
        return np.stack([self.col(n) for n in POSITION_NAMES[: config.spacedim]], axis=1) \
            if self.count else np.empty((0, config.spacedim))

    def is_valid(self, idx=None) -> np.ndarray:
        v = ids_valid(self.ids)
        return v if idx is None else v[idx]

    def append(self, data: dict[str, np.ndarray]) -> None:
        n = len(data["id"])
        if n == 0:
            return
        new = self.count + n
        for name, colobj in self._cols.items():
            colobj.ensure(new)
            colobj.view(new)[self.count:] = data[name]
        self.count = new

    def extract(self, sel) -> dict[str, np.ndarray]:
        """Copies of every column at the selected indices/mask."""
        return {name: self.col(name)[sel].copy() for name in self._cols}

    def keep(self, sel) -> None:
        """Shrink the tile to the selected particles (order preserved)."""
        kept = {name: self.col(name)[sel].copy() for name in self._cols}
        self.count = len(kept["id"])
        for name, colobj in self._cols.items():
            colobj.ensure(self.count)
            colobj.view(self.count)[:] = kept[name]

    def release(self) -> None:
        for c in self._cols.values():
            c.release()
        self.count = 0


@dataclass(frozen=True)
class LevelGrids:
    """One refinement level's grid metadata, as seen by particles."""

    ba: BoxArray
    dm: DistributionMapping
    geom: Geometry


class ParticleContainer:
    """Particles organized per (level, grid, tile) over an AMR hierarchy."""

    def __init__(self, levels, real_names=(), int_names=(), tile_size=None,
                 on_lost: str = "remove", arena=None):
        self.levels = [lv if isinstance(lv, LevelGrids) else LevelGrids(*lv) for lv in levels]
        if not self.levels:
            raise ValueError("particle container needs at least one level")
        self.real_names = tuple(real_names)
        self.int_names = tuple(int_names)
        self.tile_size = tile_size if tile_size is not None else IntVect.filled(1 << 20)
        if on_lost not in ("remove", "error"):
            raise ValueError("on_lost must be 'remove' or 'error'")
        self.on_lost = on_lost
        self.arena = arena if arena is not None else the_arena()
        self.tiles: dict[tuple[int, int, int], ParticleTile] = {}
        self._next_local_id = 0
        self.ctx = comm.current_ctx()

    @classmethod
    def from_inputs(cls, levels, inputs, real_names=(), int_names=(), arena=None):
        """Construct honoring `particles.tile_size` and `particles.on_lost`."""
        tile_size = inputs.get_intvect("particles.tile_size") \
            if "particles.tile_size" in inputs else None
        on_lost = inputs.get_string("particles.on_lost", "remove")
        return cls(levels, real_names, int_names, tile_size, on_lost, arena)

    @property
    def finest_level(self) -> int:
        return len(self.levels) - 1

    def _tile(self, key) -> ParticleTile:
        t = self.tiles.get(key)
        if t is None:
            t = ParticleTile(self.real_names, self.int_names, self.arena)
            self.tiles[key] = t
        return t

    def _wrap_positions(self, pos: np.ndarray) -> np.ndarray:
        g = self.levels[0].geom
        pos = np.array(pos, dtype=float, copy=True)
        for d in range(config.spacedim):
            if g.periodic[d]:
                lo, hi = g.prob_lo[d], g.prob_hi[d]
                pos[:, d] = lo + np.mod(pos[:, d] - lo, hi - lo)
        return pos

    def _locate(self, pos: np.ndarray):
        """(level, grid, tile, lost mask) per particle, finest level first."""
        n = pos.shape[0]
        lev = np.full(n, -1, dtype=np.int64)
        grid = np.full(n, -1, dtype=np.int64)
        tile = np.zeros(n, dtype=np.int64)
        for li in range(self.finest_level, -1, -1):
            g = self.levels[li].geom
            unassigned = lev < 0
            if not unassigned.any():
                break
            cell = np.empty((n, config.spacedim), dtype=np.int64)
            for d in range(config.spacedim):
                cell[:, d] = np.floor((pos[:, d] - g.prob_lo[d]) / g.cell_size[d]).astype(np.int64)
            for gi, box in enumerate(self.levels[li].ba):
                m = unassigned.copy()
                for d in range(config.spacedim):
                    m &= (cell[:, d] >= box.lo[d]) & (cell[:, d] <= box.hi[d])
                if not m.any():
                    continue
                lev[m] = li
                grid[m] = gi
                tile[m] = self._tile_ordinal(box, cell[m])
                unassigned &= ~m
        return lev, grid, tile, lev < 0

    def _tile_ordinal(self, box: Box, cells: np.ndarray) -> np.ndarray:
        ts = self.tile_size
        ntiles = [max(1, -(-e // t)) for e, t in zip(box.extents, ts)]
        ordinal = np.zeros(cells.shape[0], dtype=np.int64)
        stride = 1
        for d in range(config.spacedim):
            td = np.minimum((cells[:, d] - box.lo[d]) // ts[d], ntiles[d] - 1)
            ordinal += td * stride
            stride *= ntiles[d]
        return ordinal

    def add_particles(self, positions, reals: dict | None = None, ints: dict | None = None) -> None:
        """Append particles with fresh (this_rank, counter) ids at their grids."""
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        if pos.shape[1] != config.spacedim:
            raise ValueError(f"positions must be (N, {config.spacedim})")
        reals = reals or {}
        ints = ints or {}
        for name in reals:
            if name not in self.real_names:
                raise KeyError(f"unregistered real component {name!r}")
        for name in ints:
            if name not in self.int_names:
                raise KeyError(f"unregistered int component {name!r}")
        n = pos.shape[0]
        if n == 0:
            return
        pos = self._wrap_positions(pos)
        lev, grid, tile, lost = self._locate(pos)
        if lost.any():
            raise ValueError(f"{int(lost.sum())} particle(s) outside the non-periodic domain")
        rank = self.ctx.rank
        lids = np.arange(self._next_local_id, self._next_local_id + n, dtype=np.uint64)
        self._next_local_id += n
        ids = id_encode_array(rank, lids)
        data = {"id": ids}
        for d, name in enumerate(POSITION_NAMES[: config.spacedim]):
            data[name] = pos[:, d]
        for name in self.real_names:
            data[name] = np.asarray(reals.get(name, np.zeros(n)), dtype=config.real_dtype)
        for name in self.int_names:
            data[name] = np.asarray(ints.get(name, np.zeros(n, dtype=np.int64)), dtype=np.int64)
        self._scatter_to_tiles(data, lev, grid, tile)

    def _scatter_to_tiles(self, data: dict[str, np.ndarray], lev, grid, tile) -> None:
        if len(lev) == 0:
            return
        keys = np.stack([lev, grid, tile], axis=1)
        order = np.lexsort((tile, grid, lev))
        sorted_keys = keys[order]
        boundaries = np.nonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1))[0] + 1
        starts = np.concatenate(([0], boundaries))
        ends = np.concatenate((boundaries, [len(order)]))
        for s, e in zip(starts, ends):
            sel = order[s:e]
            key = tuple(int(v) for v in sorted_keys[s])
            self._tile(key).append({name: arr[sel] for name, arr in data.items()})

    def local_count(self, valid_only: bool = True) -> int:
        total = 0
        for t in self.tiles.values():
            total += int(t.is_valid().sum()) if valid_only else t.count
        return total

    def global_count(self, valid_only: bool = True) -> int:
        (n,) = comm.global_reduce([kernels.SUM], [self.local_count(valid_only)], self.ctx)
        return int(n)

    def redistribute(self) -> None:
        """Re-bin every valid particle to the (rank, level, grid, tile) owning
        its (periodically wrapped) position; drop invalidated particles.

        Collective: at most one message per ordered rank pair; ranks with
        nothing to exchange send nothing.
        """
        ctx = self.ctx
        me, nranks = ctx.rank, ctx.nranks
        names = None
        staged: list[dict[str, np.ndarray]] = []
        for key in sorted(self.tiles):
            t = self.tiles[key]
            if t.count == 0:
                continue
            valid = t.is_valid()
            data = t.extract(valid)
            if names is None:
                names = tuple(data)
            staged.append(data)
            t.count = 0
        if names is None:
            names = tuple(ParticleTile(self.real_names, self.int_names, self.arena).column_names)
        merged = {n: (np.concatenate([d[n] for d in staged]) if staged
                      else np.empty(0, dtype=np.uint64 if n == "id" else config.real_dtype))
                  for n in names}

        pos = np.stack([merged[n] for n in POSITION_NAMES[: config.spacedim]], axis=1) \
            if len(merged["id"]) else np.empty((0, config.spacedim))
        pos = self._wrap_positions(pos)
        for d, n in enumerate(POSITION_NAMES[: config.spacedim]):
            merged[n] = pos[:, d].copy()
        lev, grid, tile, lost = self._locate(pos)
        if lost.any():
            if self.on_lost == "error":
                raise ValueError(f"{int(lost.sum())} particle(s) left the non-periodic domain")
            keepm = ~lost
            for n in names:
                merged[n] = merged[n][keepm]
            lev, grid, tile = lev[keepm], grid[keepm], tile[keepm]

        owner = np.empty(len(lev), dtype=np.int64)
        for li, lg in enumerate(self.levels):
            m = lev == li
            if m.any():
                ranks = np.asarray(lg.dm.rank_of, dtype=np.int64)
                owner[m] = ranks[grid[m]]

        if nranks == 1:
            self._scatter_to_tiles(merged, lev, grid, tile)
            return

        # handshake: per-pair particle counts through the allreduce slots,
        # so empty exchanges cost zero messages
        counts_out = np.bincount(owner, minlength=nranks).astype(np.int64)
        counts_out[me] = 0
        matrix = self._exchange_counts(counts_out)

        keep_here = owner == me
        self._scatter_to_tiles({n: merged[n][keep_here] for n in names},
                               lev[keep_here], grid[keep_here], tile[keep_here])
        for peer in range(nranks):
            if peer == me or counts_out[peer] == 0:
                continue
            sel = owner == peer
            payload = {n: merged[n][sel] for n in names}
            nbytes = sum(a.nbytes for a in payload.values())
            ctx.send(peer, payload, nbytes=nbytes)
        for peer in range(nranks):
            if peer == me or matrix[peer, me] == 0:
                continue
            payload = ctx.recv(peer)
            inpos = np.stack([payload[n] for n in POSITION_NAMES[: config.spacedim]], axis=1)
            plev, pgrid, ptile, plost = self._locate(inpos)
            assert not plost.any(), "sender shipped a particle nobody owns"
            self._scatter_to_tiles(payload, plev, pgrid, ptile)
        ctx.barrier()

    def _exchange_counts(self, row: np.ndarray) -> np.ndarray:
        """All ranks learn the full per-pair count matrix (no bus messages)."""
        ctx = self.ctx
        flat = []
        for peer in range(ctx.nranks):
            flat.extend(ctx.allreduce([kernels.SUM] * ctx.nranks,
                                      row if peer == ctx.rank else np.zeros_like(row)))
        return np.asarray(flat, dtype=np.int64).reshape(ctx.nranks, ctx.nranks)

    def par_iter_tiles(self, level: int | None = None):
        """Yield (key, tile) for every locally stored non-empty tile."""
        for key in sorted(self.tiles):
            if level is not None and key[0] != level:
                continue
            t = self.tiles[key]
            if t.count:
                yield key, t

    def nonempty_tiles(self) -> list[ParticleTile]:
        return [t for _, t in self.par_iter_tiles()]

    def apply(self, body, backend=None) -> None:
        """body(tile, i) over every particle of every local tile, one launch."""
        tiles = self.nonempty_tiles()
        counts = [t.count for t in tiles]
        offsets = np.concatenate(([0], np.cumsum(counts)))
        total = int(offsets[-1])
        backend = backend if backend is not None else kernels.default_backend()

        def seg_body(flat):
            ti = int(np.searchsorted(offsets, int(flat[0]), side="right") - 1)
            pos = int(flat[0])
            end = int(flat[-1]) + 1
            while pos < end:
                seg_end = min(end, int(offsets[ti + 1]))
                i = np.arange(pos - int(offsets[ti]), seg_end - int(offsets[ti]), dtype=np.int64)
                body(tiles[ti], i)
                pos = seg_end
                ti += 1

        kernels.parallel_for_range(backend, total, seg_body)

    def reduce_mixed(self, ops, value_fn, backend=None) -> tuple[float, ...]:
        """One-pass mixed reduction over valid particles, then across ranks.

        value_fn(tile, i) -> tuple of value arrays; i indexes valid
        particles only.
        """
        tiles = self.nonempty_tiles()
        counts = [t.count for t in tiles]

        def fn(tile, lo, hi):
            i = np.arange(lo, hi, dtype=np.int64)
            i = i[tile.is_valid(i)]
            if i.size == 0:
                return tuple(np.empty(0) for _ in ops)
            return value_fn(tile, i)

        local = kernels.reduce_segmented(backend, counts, ops, fn, tiles)
        return comm.global_reduce(ops, local, self.ctx)


def particle_apply(pc: ParticleContainer, body, backend=None) -> None:
    pc.apply(body, backend)


def particle_reduce_mixed(pc: ParticleContainer, ops, value_fn, backend=None):
    return pc.reduce_mixed(ops, value_fn, backend)


class AoSRefTile:
    """Array-of-structs reference layout (benchmark-only): positions and id
    in one record array, extra components SoA on the side."""

    def __init__(self, records: np.ndarray, extras: dict[str, np.ndarray]):
        self.records = records
        self.extras = extras

    @staticmethod
    def record_dtype():
        rd = config.real_dtype
        fields = [(n, rd) for n in POSITION_NAMES[: config.spacedim]] + [("id", np.uint64)]
        return np.dtype(fields)

    @property
    def count(self) -> int:
        return len(self.records)


def soa_to_aos_ref(tile: ParticleTile) -> AoSRefTile:
    rec = np.empty(tile.count, dtype=AoSRefTile.record_dtype())
    for n in POSITION_NAMES[: config.spacedim]:
        rec[n] = tile.col(n)
    rec["id"] = tile.ids
    extras = {n: tile.col(n).copy() for n in tile.real_names + tile.int_names}
    return AoSRefTile(rec, extras)


def aos_ref_to_soa(aos: AoSRefTile, real_names=(), int_names=(), arena=None) -> ParticleTile:
    tile = ParticleTile(real_names, int_names, arena)
    data = {n: np.ascontiguousarray(aos.records[n]) for n in POSITION_NAMES[: config.spacedim]}
    data["id"] = np.ascontiguousarray(aos.records["id"])
    for n in real_names + int_names:
        data[n] = aos.extras[n]
    tile.append(data)
    return tile
