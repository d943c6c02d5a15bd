"""Integer index-space algebra: vectors, centering, boxes, problem geometry.

All types here are immutable values; they can be copied and shared across
threads freely.  Boxes live in a global index space, so lower bounds may be
negative.  The canonical empty box is lo=(0,...), hi=(-1,...).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from . import config

CELL = 0
NODE = 1


def _as_components(vals, what: str) -> tuple[int, ...]:
    comps = tuple(int(v) for v in vals)
    if len(comps) != config.spacedim:
        raise ValueError(
            f"{what} needs {config.spacedim} components (spacedim build), got {len(comps)}"
        )
    return comps


@dataclass(frozen=True)
class IntVect:
    """SPACEDIM signed integer components with exact componentwise arithmetic."""

    comps: tuple[int, ...]

    def __init__(self, *comps):
        if len(comps) == 1 and isinstance(comps[0], (tuple, list, IntVect)):
            comps = tuple(comps[0]) if not isinstance(comps[0], IntVect) else comps[0].comps
        object.__setattr__(self, "comps", _as_components(comps, "IntVect"))

    @staticmethod
    def zero() -> "IntVect":
        return IntVect(*([0] * config.spacedim))

    @staticmethod
    def unit() -> "IntVect":
        return IntVect(*([1] * config.spacedim))

    @staticmethod
    def filled(v: int) -> "IntVect":
        return IntVect(*([int(v)] * config.spacedim))

    def __iter__(self) -> Iterator[int]:
        return iter(self.comps)

    def __len__(self) -> int:
        return len(self.comps)

    def __getitem__(self, i: int) -> int:
        return self.comps[i]

    def _coerce(self, other) -> tuple[int, ...]:
        if isinstance(other, IntVect):
            return other.comps
        if isinstance(other, (tuple, list)):
            return _as_components(other, "IntVect operand")
        return tuple(int(other) for _ in self.comps)

    def __add__(self, other) -> "IntVect":
        o = self._coerce(other)
        return IntVect(*(a + b for a, b in zip(self.comps, o)))

    def __sub__(self, other) -> "IntVect":
        o = self._coerce(other)
        return IntVect(*(a - b for a, b in zip(self.comps, o)))

    def __neg__(self) -> "IntVect":
        return IntVect(*(-a for a in self.comps))

    def __mul__(self, other) -> "IntVect":
        o = self._coerce(other)
        return IntVect(*(a * b for a, b in zip(self.comps, o)))

    __rmul__ = __mul__

    def __floordiv__(self, other) -> "IntVect":
        o = self._coerce(other)
        return IntVect(*(a // b for a, b in zip(self.comps, o)))

    def max(self, other) -> "IntVect":
        o = self._coerce(other)
        return IntVect(*(max(a, b) for a, b in zip(self.comps, o)))

    def min(self, other) -> "IntVect":
        o = self._coerce(other)
        return IntVect(*(min(a, b) for a, b in zip(self.comps, o)))

    def all_le(self, other) -> bool:
        return all(a <= b for a, b in zip(self.comps, self._coerce(other)))

    def all_ge(self, other) -> bool:
        return all(a >= b for a, b in zip(self.comps, self._coerce(other)))

    def __repr__(self) -> str:
        return f"IntVect{self.comps}"

    def __str__(self) -> str:
        return "(" + ",".join(str(c) for c in self.comps) + ")"


@dataclass(frozen=True)
class IndexType:
    """Per-axis centering: CELL or NODE.  Face/edge types are mixed flags."""

    flags: tuple[int, ...]

    def __init__(self, *flags):
        if len(flags) == 1 and isinstance(flags[0], (tuple, list, IndexType)):
            flags = tuple(flags[0]) if not isinstance(flags[0], IndexType) else flags[0].flags
        flags = _as_components(flags, "IndexType")
        if any(f not in (CELL, NODE) for f in flags):
            raise ValueError(f"centering flags must be CELL(0) or NODE(1), got {flags}")
        object.__setattr__(self, "flags", flags)

    @staticmethod
    def cell() -> "IndexType":
        return IndexType(*([CELL] * config.spacedim))

    @staticmethod
    def node() -> "IndexType":
        return IndexType(*([NODE] * config.spacedim))

    @property
    def is_cell(self) -> bool:
        return all(f == CELL for f in self.flags)

    @property
    def is_node(self) -> bool:
        return all(f == NODE for f in self.flags)

    @property
    def is_mixed(self) -> bool:
        return not (self.is_cell or self.is_node)

    def __iter__(self) -> Iterator[int]:
        return iter(self.flags)

    def __str__(self) -> str:
        return "(" + ",".join(str(f) for f in self.flags) + ")"


@dataclass(frozen=True)
class Box:
    """Global index-space rectangle [lo, hi] with per-axis centering.

    lo components may be negative.  A box with any hi < lo is empty; empty
    results are normalized to the canonical empty box.
    """

    lo: IntVect
    hi: IntVect
    ixtype: IndexType

    def __init__(self, lo, hi, ixtype: IndexType | None = None):
        lo = lo if isinstance(lo, IntVect) else IntVect(lo)
        hi = hi if isinstance(hi, IntVect) else IntVect(hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "ixtype", ixtype if ixtype is not None else IndexType.cell())

    @property
    def ok(self) -> bool:
        """True for a non-empty box."""
        return self.lo.all_le(self.hi)

    @property
    def is_empty(self) -> bool:
        return not self.ok

    @property
    def extents(self) -> tuple[int, ...]:
        if self.is_empty:
            return tuple(0 for _ in self.lo)
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def num_pts(self) -> int:
        return math.prod(self.extents)

    def contains_point(self, pt) -> bool:
        pt = pt if isinstance(pt, IntVect) else IntVect(pt)
        return self.lo.all_le(pt) and pt.all_le(self.hi)

    def contains(self, other: "Box") -> bool:
        if other.is_empty:
            return True
        return self.lo.all_le(other.lo) and other.hi.all_le(self.hi)

    def intersects(self, other: "Box") -> bool:
        return not intersect(self, other).is_empty

    def shift(self, iv) -> "Box":
        iv = iv if isinstance(iv, IntVect) else IntVect(iv)
        if self.is_empty:
            return empty_box(self.ixtype)
        return Box(self.lo + iv, self.hi + iv, self.ixtype)

    def grow(self, n) -> "Box":
        return grow(self, n)

    def cells(self):
        """Iterate all points as IntVects, x fastest (Fortran order)."""
        if self.is_empty:
            return
        ranges = [range(l, h + 1) for l, h in zip(self.lo, self.hi)]
        for rev in itertools.product(*reversed(ranges)):
            yield IntVect(*reversed(rev))

    def __str__(self) -> str:
        return f"({self.lo} {self.hi} {self.ixtype})"


def empty_box(ixtype: IndexType | None = None) -> Box:
    return Box(IntVect.zero(), IntVect.filled(-1), ixtype)


def intersect(a: Box, b: Box) -> Box:
    """Componentwise [max(lo), min(hi)]; the empty box when disjoint."""
    if a.ixtype != b.ixtype:
        raise ValueError(f"cannot intersect boxes of different index types: {a} vs {b}")
    if a.is_empty or b.is_empty:
        return empty_box(a.ixtype)
    lo = a.lo.max(b.lo)
    hi = a.hi.min(b.hi)
    if not lo.all_le(hi):
        return empty_box(a.ixtype)
    return Box(lo, hi, a.ixtype)


def grow(b: Box, n) -> Box:
    """lo -= n, hi += n per axis; a degenerate result is the empty box."""
    if b.is_empty:
        return empty_box(b.ixtype)
    n = n if isinstance(n, IntVect) else IntVect.filled(n)
    lo = b.lo - n
    hi = b.hi + n
    if not lo.all_le(hi):
        return empty_box(b.ixtype)
    return Box(lo, hi, b.ixtype)


def _require_cell_ratio(b: Box, ratio: int, op: str) -> int:
    ratio = int(ratio)
    if ratio < 1:
        raise ValueError(f"{op} ratio must be >= 1, got {ratio}")
    if not b.ixtype.is_cell:
        raise ValueError(f"{op} is only defined for cell-centered boxes, got {b}")
    return ratio


def refine(b: Box, ratio: int) -> Box:
    """Cell box to the finer index space: lo*r .. hi*r + (r-1)."""
    ratio = _require_cell_ratio(b, ratio, "refine")
    if b.is_empty:
        return empty_box(b.ixtype)
    return Box(b.lo * ratio, b.hi * ratio + IntVect.filled(ratio - 1), b.ixtype)


def coarsen(b: Box, ratio: int) -> Box:
    """Cell box to the coarser index space by floor division of lo and hi."""
    ratio = _require_cell_ratio(b, ratio, "coarsen")
    if b.is_empty:
        return empty_box(b.ixtype)
    return Box(b.lo // ratio, b.hi // ratio, b.ixtype)


def convert(b: Box, t: IndexType) -> Box:
    """Per axis, CELL->NODE adds 1 to hi; NODE->CELL subtracts 1 from hi."""
    if b.is_empty:
        return empty_box(t)
    hi = list(b.hi)
    for d, (old, new) in enumerate(zip(b.ixtype, t)):
        if old == CELL and new == NODE:
            hi[d] += 1
        elif old == NODE and new == CELL:
            hi[d] -= 1
    lo = b.lo
    if not lo.all_le(hi):
        return empty_box(t)
    return Box(lo, IntVect(*hi), t)


def num_pts(b: Box) -> int:
    return b.num_pts


def box_diff(a: Box, b: Box) -> list[Box]:
    """Decompose a \\ b into disjoint boxes (at most 2 per axis)."""
    if a.is_empty:
        return []
    isect = intersect(a, b)
    if isect.is_empty:
        return [a]
    out: list[Box] = []
    remaining = a
    for d in range(len(a.lo)):
        lo = list(remaining.lo)
        hi = list(remaining.hi)
        if remaining.lo[d] < isect.lo[d]:
            hi2 = list(hi)
            hi2[d] = isect.lo[d] - 1
            out.append(Box(IntVect(*lo), IntVect(*hi2), a.ixtype))
        if remaining.hi[d] > isect.hi[d]:
            lo2 = list(lo)
            lo2[d] = isect.hi[d] + 1
            out.append(Box(IntVect(*lo2), IntVect(*hi), a.ixtype))
        lo[d] = isect.lo[d]
        hi[d] = isect.hi[d]
        remaining = Box(IntVect(*lo), IntVect(*hi), a.ixtype)
    return out


def box_list_diff(boxes: Iterable[Box], subtract: Iterable[Box]) -> list[Box]:
    """Subtract every box in `subtract` from every box in `boxes`."""
    current = [b for b in boxes if not b.is_empty]
    for s in subtract:
        nxt: list[Box] = []
        for b in current:
            nxt.extend(box_diff(b, s))
        current = nxt
    return current


def boxes_cover(boxes: Sequence[Box], target: Box) -> bool:
    """True when the union of `boxes` contains every point of `target`."""
    return len(box_list_diff([target], boxes)) == 0


@dataclass(frozen=True)
class Geometry:
    """Physical problem geometry for one level: cell domain, bounds, periodicity."""

    domain: Box
    prob_lo: tuple[float, ...]
    prob_hi: tuple[float, ...]
    periodic: tuple[bool, ...]
    cell_size: tuple[float, ...]

    def __init__(self, domain: Box, prob_lo, prob_hi, periodic):
        if not domain.ixtype.is_cell:
            raise ValueError("geometry domain must be cell-centered")
        if domain.is_empty:
            raise ValueError("geometry domain must be non-empty")
        prob_lo = tuple(float(v) for v in prob_lo)
        prob_hi = tuple(float(v) for v in prob_hi)
        periodic = tuple(bool(v) for v in periodic)
        n = len(domain.lo)
        if not (len(prob_lo) == len(prob_hi) == len(periodic) == n):
            raise ValueError("geometry fields must all have spacedim entries")
        cell_size = tuple(
            (hi - lo) / ext for lo, hi, ext in zip(prob_lo, prob_hi, domain.extents)
        )
        if any(h <= 0 for h in cell_size):
            raise ValueError(f"cell sizes must be positive, got {cell_size}")
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "prob_lo", prob_lo)
        object.__setattr__(self, "prob_hi", prob_hi)
        object.__setattr__(self, "periodic", periodic)
        object.__setattr__(self, "cell_size", cell_size)

    @property
    def period(self) -> tuple[int, ...]:
        """Index-space period per axis (the cell extent of the domain)."""
        return self.domain.extents

    def refined(self, ratio: int) -> "Geometry":
        return Geometry(refine(self.domain, ratio), self.prob_lo, self.prob_hi, self.periodic)

    def coarsened(self, ratio: int) -> "Geometry":
        return Geometry(coarsen(self.domain, ratio), self.prob_lo, self.prob_hi, self.periodic)


def periodic_shifts(b: Box, g: Geometry) -> list[IntVect]:
    """Shift vectors (multiples of the domain period on periodic axes) whose
    translate of b intersects the domain.  Always includes candidates axis by
    axis; the zero shift is first."""
    per_axis: list[list[int]] = []
    dom = convert(g.domain, b.ixtype)
    for d in range(len(b.lo)):
        if not g.periodic[d]:
            per_axis.append([0])
            continue
        ext = g.period[d]
        kmin = math.ceil((dom.lo[d] - b.hi[d]) / ext)
        kmax = math.floor((dom.hi[d] - b.lo[d]) / ext)
        ks = [k * ext for k in range(kmin, kmax + 1)]
        if not ks:
            ks = [0]
        elif 0 in ks:
            ks.remove(0)
            ks.insert(0, 0)
        per_axis.append(ks)
    shifts = [IntVect(*combo) for combo in itertools.product(*per_axis)]
    zero = IntVect.zero()
    shifts.sort(key=lambda s: (s != zero, s.comps))
    return shifts


def periodic_shift_images(b: Box, g: Geometry) -> list[tuple[Box, IntVect]]:
    """All periodic translates of b that intersect the domain, with shifts.

    Non-periodic axes contribute no images; a fully interior box yields a
    single image with zero shift.
    """
    images = []
    dom = convert(g.domain, b.ixtype)
    for s in periodic_shifts(b, g):
        img = b.shift(s)
        if not intersect(img, dom).is_empty:
            images.append((img, s))
    return images
