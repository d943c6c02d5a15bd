"""Bespoke plotfile format (bit-exact round trip).

Layout:
    line 1: ``MINIAMR-PLT v1``
    line 2: ``ndim ncomp nlevels time``      (time via repr, round-trips)
    line 3: component names, space separated
    per level: ``nboxes ref_ratio`` then one box per line ``lo... hi...``
    binary section: per fab (levels then boxes in order), an 8-byte
    little-endian length followed by the valid-region payload as
    little-endian IEEE-754 doubles, Fortran order, components in order.

Box text rendering elsewhere in logs is ``((lo) (hi) (ixtype))``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import comm, config
from .index_space import Box, IntVect
from .mesh import BoxArray, DistributionMapping, MultiFab, _region_slices

MAGIC = "MINIAMR-PLT v1"


@dataclass
class PlotLevel:
    boxes: list[Box]
    ref_ratio: int
    fab_data: list[np.ndarray]  # (nx, ny, nz, ncomp) arrays, valid region only


@dataclass
class PlotfileData:
    ndim: int
    names: list[str]
    time: float
    levels: list[PlotLevel]


def _level_payloads(mf: MultiFab) -> list[np.ndarray]:
    """Valid-region data of every fab, gathered to rank 0 when distributed."""
    ctx = comm.current_ctx()
    if ctx.nranks > 1:
        home = MultiFab(mf.ba, DistributionMapping([0] * len(mf.ba), ctx.nranks),
                        mf.ncomp, 0, arena=mf.arena)
        comm.parallel_copy(home, mf)
        src = home
    else:
        src = mf
    out = []
    if ctx.rank == 0:
        for gi in range(len(mf.ba)):
            fab = src.fabs[gi]
            out.append(fab.data[_region_slices(fab.box, mf.ba[gi])].copy())
    if src is not mf:
        src.close()
    return out


def write_plotfile(path: str, multifabs: list[MultiFab], names: list[str],
                   time: float, ref_ratio: int = 2) -> None:
    """Write one file for the hierarchy; collective, rank 0 writes."""
    ncomp = multifabs[0].ncomp if multifabs else len(names)
    if len(names) != ncomp:
        raise ValueError(f"need {ncomp} component names, got {len(names)}")
    if any(" " in n for n in names):
        raise ValueError("component names must not contain spaces")
    payloads = [_level_payloads(mf) for mf in multifabs]
    if comm.current_ctx().rank != 0:
        return
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC}\n".encode())
        fh.write(f"{config.spacedim} {ncomp} {len(multifabs)} {float(time)!r}\n".encode())
        fh.write((" ".join(names) + "\n").encode())
        for mf in multifabs:
            fh.write(f"{len(mf.ba)} {int(ref_ratio)}\n".encode())
            for b in mf.ba:
                nums = list(b.lo) + list(b.hi)
                fh.write((" ".join(str(v) for v in nums) + "\n").encode())
        for level in payloads:
            for arr in level:
                raw = np.ascontiguousarray(arr.ravel(order="F"), dtype="<f8").tobytes()
                fh.write(struct.pack("<Q", len(raw)))
                fh.write(raw)


def read_plotfile(path: str) -> PlotfileData:
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.find(b"\n")
    if newline < 0 or blob[:newline].decode() != MAGIC:
        raise ValueError(f"{path}: bad magic; not a plotfile")
    pos = newline + 1

    def take_line() -> str:
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise ValueError(f"{path}: truncated header")
        line = blob[pos:end].decode()
        pos = end + 1
        return line

    ndim_s, ncomp_s, nlev_s, time_s = take_line().split()
    ndim, ncomp, nlevels = int(ndim_s), int(ncomp_s), int(nlev_s)
    if ndim != config.spacedim:
        raise ValueError(f"{path}: plotfile is {ndim}D but the build is {config.spacedim}D")
    names = take_line().split()
    if len(names) != ncomp:
        raise ValueError(f"{path}: expected {ncomp} names, got {len(names)}")
    levels = []
    for _ in range(nlevels):
        nboxes_s, ratio_s = take_line().split()
        boxes = []
        for _ in range(int(nboxes_s)):
            nums = [int(v) for v in take_line().split()]
            boxes.append(Box(IntVect(*nums[:ndim]), IntVect(*nums[ndim:])))
        levels.append(PlotLevel(boxes, int(ratio_s), []))
    for level in levels:
        for b in level.boxes:
            if pos + 8 > len(blob):
                raise ValueError(f"{path}: truncated payload")
            (nbytes,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            expect = b.num_pts * ncomp * 8
            if nbytes != expect or pos + nbytes > len(blob):
                raise ValueError(f"{path}: payload size mismatch for box {b}")
            flat = np.frombuffer(blob, dtype="<f8", count=b.num_pts * ncomp, offset=pos)
            pos += nbytes
            from .mesh import storage_shape
            level.fab_data.append(flat.reshape(storage_shape(b, ncomp), order="F").copy())
    return PlotfileData(ndim, names, float(time_s), levels)


def plotfile_to_multifabs(data: PlotfileData, arena=None) -> list[MultiFab]:
    """Materialize a read plotfile as single-rank MultiFabs (ngrow 0)."""
    out = []
    for level in data.levels:
        ba = BoxArray(level.boxes)
        dm = DistributionMapping([0] * len(ba))
        mf = MultiFab(ba, dm, len(data.names), 0, arena=arena)
        for gi, arr in enumerate(level.fab_data):
            mf.fabs[gi].data[...] = arr
        out.append(mf)
    return out
