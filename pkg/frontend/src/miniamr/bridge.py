"""Zero-copy array views over native mesh and particle storage.

BoundArray4 publishes a fab's storage through the array-interface protocol
(version 3): shape is always four axes (nx, ny, nz, ncomp) with trailing
size-1 spatial axes in lower-dimensional builds, strides are in bytes, and
the data pointer is the native storage address, so consumers mutate native
memory in place.  Note the index convention: these views are zero-based per
local block, while native FabView indexing is global (lower bounds can be
negative).
"""

from __future__ import annotations

from collections.abc import Mapping
from typing import Iterator

import numpy as np

from miniamr_core import Fab, FabView, MultiFab, config
from miniamr_core.particles import POSITION_NAMES, ParticleContainer, ParticleTile


class BoundArray4:
    """Array-protocol handle onto one fab's (nx, ny, nz, ncomp) storage."""

    def __init__(self, source):
        if isinstance(source, Fab):
            self._keepalive = source
            view = source.view()
        elif isinstance(source, FabView):
            self._keepalive = source
            view = source
        else:
            raise TypeError(f"expected a Fab or FabView, got {type(source).__name__}")
        self._a = view.array if isinstance(view, FabView) else view
        self._writable = bool(getattr(view, "writable", self._a.flags.writeable))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self._a.shape

    @property
    def strides(self) -> tuple[int, int, int, int]:
        return self._a.strides  # bytes

    @property
    def typestr(self) -> str:
        return self._a.__array_interface__["typestr"]

    @property
    def address(self) -> int:
        return self._a.__array_interface__["data"][0]

    @property
    def __array_interface__(self) -> dict:
        return {
            "shape": self.shape,
            "typestr": self.typestr,
            "strides": self.strides,
            "data": (self.address, not self._writable),
            "version": 3,
        }

    def to_host_array(self, order: str = "F", copy: bool = False) -> np.ndarray:
        """Host ndarray over the same bytes (or an independent copy).

        order="F": axes (x, y, z, component), column-major.
        order="C": axes (component, z, y, x), row-major, same storage.
        """
        base = np.asarray(self)
        if order == "F":
            out = base
        elif order == "C":
            out = base.transpose(3, 2, 1, 0)
        else:
            raise ValueError(f"order must be 'F' or 'C', got {order!r}")
        if copy:
            out = np.asfortranarray(out) if order == "F" else np.ascontiguousarray(out)
            if out.base is base or out is base:  # already contiguous: still copy
                out = out.copy(order="F" if order == "F" else "C")
        return out

    def to_numpy(self, order: str = "F", copy: bool = False) -> np.ndarray:
        return self.to_host_array(order, copy)


def array_view(source) -> BoundArray4:
    return BoundArray4(source)


class MfiAccessor:
    """Per-fab handle yielded by multifab_iter."""

    def __init__(self, mf: MultiFab, index: int):
        self._mf = mf
        self.index = index

    def tilebox(self):
        return self._mf.valid_box(self.index)

    @property
    def n_grow_vect(self):
        return self._mf.ngrow

    def array_view(self, writable: bool = True) -> BoundArray4:
        fab = self._mf.fab(self.index)
        return BoundArray4(fab.view(writable=writable))

    def to_host_array(self, order: str = "F", copy: bool = False) -> np.ndarray:
        return self.array_view().to_host_array(order, copy)


def multifab_iter(mf: MultiFab) -> Iterator[MfiAccessor]:
    """Yield one accessor per locally owned fab.

    Structural mutation of the MultiFab while iterating raises.
    """
    snapshot = tuple(mf.local_indices)
    live = tuple(sorted(mf.fabs))
    for gi in snapshot:
        if tuple(sorted(mf.fabs)) != live:
            raise RuntimeError("MultiFab structure changed during iteration")
        yield MfiAccessor(mf, gi)


class _Columns(Mapping):
    """Live, writable, zero-copy name -> column mapping."""

    def __init__(self, tile: ParticleTile, names: tuple[str, ...]):
        self._tile = tile
        self._names = names

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self._names:
            raise KeyError(f"unknown particle column {name!r}")
        return self._tile.col(name)

    def __iter__(self):
        return iter(self._names)

    def __len__(self) -> int:
        return len(self._names)


class BoundSoA:
    """Named zero-copy particle column views: positions, id, runtime data."""

    def __init__(self, tile: ParticleTile):
        self._tile = tile
        pos = POSITION_NAMES[: config.spacedim]
        self.real = _Columns(tile, pos + tile.real_names)
        self.int = _Columns(tile, tile.int_names)

    @property
    def id(self) -> np.ndarray:
        return self._tile.ids

    def to_numpy(self) -> "BoundSoA":
        return self  # columns are already host numpy views

    def __len__(self) -> int:
        return self._tile.count


def particle_soa_view(tile: ParticleTile) -> BoundSoA:
    return BoundSoA(tile)


class PtiAccessor:
    """Per-tile handle yielded by particle_iter (Listing-style pti)."""

    def __init__(self, key, tile: ParticleTile):
        self.level, self.grid, self.tile_index = key
        self._tile = tile

    def soa(self) -> BoundSoA:
        return BoundSoA(self._tile)

    @property
    def num_particles(self) -> int:
        return self._tile.count


def particle_iter(pc: ParticleContainer, level: int | None = None) -> Iterator[PtiAccessor]:
    for key, tile in pc.par_iter_tiles(level):
        yield PtiAccessor(key, tile)
