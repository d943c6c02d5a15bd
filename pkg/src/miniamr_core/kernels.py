"""Backend abstraction: per-box and fused parallel-for, specialized dispatch,
and single-pass mixed reductions.

Bodies follow a vectorized convention: they are handed equal-length int64
index arrays (i, j, k[, c]) covering each index of the launch exactly once,
and are expected to be safe under concurrent invocation on disjoint chunks.
Every public launch increments the backend's launch counter exactly once,
no matter how many boxes or chunks it spans.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import arena as arena_mod
from .index_space import Box
from .mesh import MultiFab, _pad3

SERIAL = "serial"
CPU_PARALLEL = "parallel"

SUM = "sum"
MIN = "min"
MAX = "max"

_IDENTITY = {SUM: 0.0, MIN: math.inf, MAX: -math.inf}
_NP_REDUCE = {SUM: np.sum, MIN: np.min, MAX: np.max}

# cap on index-array length per body invocation; bounds transient memory
_MAX_BLOCK = 1 << 20


class Backend:
    """Launch backend: SERIAL runs chunks inline, CPU_PARALLEL on a pool.

    The launch counter counts dispatches (public API calls), mirroring the
    one-kernel-per-launch accounting that fusion is meant to amortize.
    """

    def __init__(self, kind: str = SERIAL, nworkers: int | None = None):
        if kind not in (SERIAL, CPU_PARALLEL):
            raise ValueError(f"backend kind must be '{SERIAL}' or '{CPU_PARALLEL}'")
        self.kind = kind
        self.nworkers = int(nworkers) if nworkers else (os.cpu_count() or 1)
        if self.nworkers < 1:
            raise ValueError("nworkers must be >= 1")
        self._counter_lock = threading.Lock()
        self.launch_counter = 0
        self._pool: ThreadPoolExecutor | None = None
        self._async_pool: ThreadPoolExecutor | None = None

    def _bump(self) -> None:
        with self._counter_lock:
            self.launch_counter += 1

    def _get_pool(self) -> ThreadPoolExecutor:
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.nworkers,
                                            thread_name_prefix="miniamr-worker")
        return self._pool

    def _run_chunks(self, chunk_fn) -> None:
        """Run chunk_fn(w) for each chunk index (serial: the single chunk)."""
        if self.kind == SERIAL:
            chunk_fn(0)
            return
        pool = self._get_pool()
        futs = [pool.submit(chunk_fn, w) for w in range(self.nworkers)]
        for f in futs:
            f.result()

    def n_chunks(self) -> int:
        return 1 if self.kind == SERIAL else self.nworkers

    def submit_async(self, fn, *args, **kwargs) -> Future:
        """Schedule fn on the async task pool; returns a completion token.

        The token is registered with the innermost active async-arena scope,
        so temporaries freed at scope exit outlive the task.
        """
        if self._async_pool is None:
            self._async_pool = ThreadPoolExecutor(max_workers=max(2, self.nworkers),
                                                  thread_name_prefix="miniamr-async")
        fut = self._async_pool.submit(fn, *args, **kwargs)
        arena_mod.note_async_token(fut)
        return fut

    def drain_async(self) -> None:
        """Block until every submitted async task has finished."""
        if self._async_pool is not None:
            self._async_pool.shutdown(wait=True)
            self._async_pool = None


_default_backend: Backend | None = None
_default_lock = threading.Lock()


def default_backend() -> Backend:
    global _default_backend
    with _default_lock:
        if _default_backend is None:
            _default_backend = Backend(CPU_PARALLEL)
        return _default_backend


def set_default_backend(backend: Backend) -> None:
    global _default_backend
    with _default_lock:
        _default_backend = backend


def _resolve(backend: Backend | None) -> Backend:
    return backend if backend is not None else default_backend()


def _chunk_bounds(total: int, nchunks: int) -> list[tuple[int, int]]:
    base, rem = divmod(total, nchunks)
    bounds = []
    start = 0
    for w in range(nchunks):
        size = base + (1 if w < rem else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


_index_cache: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
_index_cache_lock = threading.Lock()


def _box_local_indices(extents: tuple[int, int, int]):
    """Cached local (zero-based) index arrays for a full box, Fortran order."""
    with _index_cache_lock:
        hit = _index_cache.get(extents)
    if hit is not None:
        return hit
    ex, ey, ez = extents
    n = ex * ey * ez
    flat = np.arange(n, dtype=np.int64)
    i = flat % ex
    rest = flat // ex
    j = rest % ey
    k = rest // ey
    with _index_cache_lock:
        if len(_index_cache) > 16:
            _index_cache.clear()
        _index_cache[extents] = (i, j, k)
    return i, j, k


def _box_chunk_indices(box: Box, start: int, stop: int):
    """Global (i, j, k) arrays for the flat cell range [start, stop) of box."""
    ex, ey, ez = _pad3(box.extents, 1)
    lo = _pad3(box.lo, 0)
    if ex * ey * ez <= (_MAX_BLOCK << 2):
        il, jl, kl = _box_local_indices((ex, ey, ez))
        return il[start:stop] + lo[0], jl[start:stop] + lo[1], kl[start:stop] + lo[2]
    flat = np.arange(start, stop, dtype=np.int64)
    i = flat % ex + lo[0]
    rest = flat // ex
    j = rest % ey + lo[1]
    k = rest // ey + lo[2]
    return i, j, k


def _for_box_range(box: Box, ncells: int, ncomp: int | None, body, start: int, stop: int) -> None:
    pos = start
    while pos < stop:
        end = min(pos + _MAX_BLOCK, stop)
        if ncomp is None:
            i, j, k = _box_chunk_indices(box, pos, end)
            body(i, j, k)
        else:
            flat = np.arange(pos, end, dtype=np.int64)
            c = flat // ncells
            m = flat % ncells
            # component runs are contiguous in flat order; split per component
            lo_c, hi_c = int(c[0]), int(c[-1])
            if lo_c == hi_c:
                i, j, k = _box_chunk_indices(box, int(m[0]), int(m[-1]) + 1)
                body(i, j, k, c)
            else:
                off = 0
                for cc in range(lo_c, hi_c + 1):
                    seg = int(np.count_nonzero(c == cc))
                    i, j, k = _box_chunk_indices(box, int(m[off]), int(m[off]) + seg)
                    body(i, j, k, c[off:off + seg])
                    off += seg
        pos = end


def parallel_for_box(backend: Backend | None, box: Box, body, ncomp: int | None = None) -> None:
    """Invoke body once per index of box (x ncomp); one launch."""
    backend = _resolve(backend)
    backend._bump()
    ncells = box.num_pts
    total = ncells * (ncomp if ncomp else 1)
    if total == 0:
        return
    bounds = _chunk_bounds(total, backend.n_chunks())

    def run(w: int) -> None:
        s, e = bounds[w]
        if s < e:
            _for_box_range(box, ncells, ncomp, body, s, e)

    backend._run_chunks(run)


def parallel_for_range(backend: Backend | None, n: int, body) -> None:
    """1-D launch: body(i) over [0, n); one launch."""
    backend = _resolve(backend)
    backend._bump()
    if n == 0:
        return
    bounds = _chunk_bounds(n, backend.n_chunks())

    def run(w: int) -> None:
        s, e = bounds[w]
        pos = s
        while pos < e:
            end = min(pos + _MAX_BLOCK, e)
            body(np.arange(pos, end, dtype=np.int64))
            pos = end

    backend._run_chunks(run)


def _fused_boxes(source) -> list[Box]:
    if isinstance(source, MultiFab):
        return source.local_boxes()
    return list(source)


def parallel_for_fused(backend: Backend | None, source, body) -> None:
    """One launch spanning every (box, cell) of the source.

    body(box_index, i, j, k) runs once per cell of every box; output is
    identical to looping parallel_for_box over the boxes, but the launch
    counter moves by one in total.  The flattened (box, cell) space is
    partitioned across workers by contiguous chunks.
    """
    backend = _resolve(backend)
    backend._bump()
    boxes = _fused_boxes(source)
    counts = [b.num_pts for b in boxes]
    offsets = np.concatenate(([0], np.cumsum(counts)))
    total = int(offsets[-1])
    if total == 0:
        return
    bounds = _chunk_bounds(total, backend.n_chunks())

    def run(w: int) -> None:
        s, e = bounds[w]
        if s >= e:
            return
        bi = int(np.searchsorted(offsets, s, side="right") - 1)
        pos = s
        while pos < e:
            box_end = int(offsets[bi + 1])
            seg_end = min(e, box_end)
            local_s = pos - int(offsets[bi])
            local_e = seg_end - int(offsets[bi])
            _for_box_range(boxes[bi], counts[bi], None,
                           lambda i, j, k: body(bi, i, j, k), local_s, local_e)
            pos = seg_end
            bi += 1

    backend._run_chunks(run)


def fused_segments(backend: Backend | None, nsegments: int, segment_fn) -> None:
    """One launch executing segment_fn(s) for every segment index.

    Used for pack/unpack-style work where each segment is an internally
    vectorized copy; segments are distributed across workers contiguously.
    """
    backend = _resolve(backend)
    backend._bump()
    if nsegments == 0:
        return
    bounds = _chunk_bounds(nsegments, backend.n_chunks())

    def run(w: int) -> None:
        s, e = bounds[w]
        for seg in range(s, e):
            segment_fn(seg)

    backend._run_chunks(run)


@dataclass
class OptionTable:
    """Finite integer option sets with one selected runtime value per set."""

    sets: tuple[tuple[int, ...], ...]
    selected: list[int] = field(default_factory=list)

    def __init__(self, sets, selected=None):
        self.sets = tuple(tuple(int(v) for v in s) for s in sets)
        if any(len(s) == 0 for s in self.sets):
            raise ValueError("option sets must be non-empty")
        self.selected = list(selected) if selected is not None else [s[0] for s in self.sets]

    @property
    def num_combinations(self) -> int:
        return math.prod(len(s) for s in self.sets)

    def case_index(self) -> int:
        """Mixed-radix index of the selected combination; validates membership."""
        if len(self.selected) != len(self.sets):
            raise ValueError("selected length must match the number of option sets")
        idx = 0
        for sel, s in zip(self.selected, self.sets):
            if sel not in s:
                raise ValueError(f"selected value {sel} is not a member of option set {s}")
            idx = idx * len(s) + s.index(sel)
        return idx


class SpecializedKernel:
    """Dense table of body variants, one per combination of option values.

    Each variant binds its case constants at construction, standing in for
    the compile-time expansion of runtime options; dispatch picks exactly
    one variant by mixed-radix index.
    """

    def __init__(self, table: OptionTable, body):
        self.table = table
        self.variants = []
        for combo in product(*table.sets):
            def variant(i, _combo=combo, _body=body):
                return _body(i, *_combo)
            self.variants.append(variant)

    @property
    def num_variants(self) -> int:
        return len(self.variants)

    def dispatch(self, backend: Backend | None, n: int, selected=None) -> None:
        if selected is not None:
            self.table.selected = list(selected)
        idx = self.table.case_index()  # raises before any launch
        parallel_for_range(backend, n, self.variants[idx])


def dispatch_specialized(table: OptionTable, backend: Backend | None, n: int, body) -> SpecializedKernel:
    """Instantiate all variants of body over the table and run the selected one."""
    kern = SpecializedKernel(table, body)
    kern.dispatch(backend, n)
    return kern


def _combine(op: str, a: float, b: float) -> float:
    if op == SUM:
        return a + b
    if op == MIN:
        return min(a, b)
    return max(a, b)


def _reduce_core(backend: Backend, total: int, ops, eval_block) -> tuple[float, ...]:
    """Single-dispatch reduction over a flat index space.

    eval_block(s, e) yields tuples of per-op value arrays covering [s, e).
    Worker partials start at the identities and combine in worker-index
    order, so results are deterministic for a fixed worker count.
    """
    ops = list(ops)
    backend._bump()
    nchunks = backend.n_chunks()
    bounds = _chunk_bounds(total, nchunks)
    partials = [[_IDENTITY[op] for op in ops] for _ in range(nchunks)]

    def run(w: int) -> None:
        s, e = bounds[w]
        acc = partials[w]
        pos = s
        while pos < e:
            end = min(pos + _MAX_BLOCK, e)
            for vals in eval_block(pos, end):
                for n, (op, x) in enumerate(zip(ops, vals)):
                    arr = np.asarray(x)
                    if arr.size:
                        acc[n] = _combine(op, acc[n], float(_NP_REDUCE[op](arr)))
            pos = end

    if total > 0:
        backend._run_chunks(run)
    out = [_IDENTITY[op] for op in ops]
    for w in range(nchunks):
        for n, op in enumerate(ops):
            out[n] = _combine(op, out[n], partials[w][n])
    return tuple(out)


def reduce_box(backend: Backend | None, box: Box, ops, value_fn) -> tuple[float, ...]:
    """(ops...) over one box; value_fn(i, j, k) -> tuple of value arrays."""
    backend = _resolve(backend)
    ncells = box.num_pts

    def eval_block(s, e):
        i, j, k = _box_chunk_indices(box, s, e)
        yield value_fn(i, j, k)

    return _reduce_core(backend, ncells, ops, eval_block)


def reduce_range(backend: Backend | None, n: int, ops, value_fn) -> tuple[float, ...]:
    """(ops...) over [0, n); value_fn(i) -> tuple of value arrays."""
    backend = _resolve(backend)

    def eval_block(s, e):
        yield value_fn(np.arange(s, e, dtype=np.int64))

    return _reduce_core(backend, n, ops, eval_block)


def reduce_segmented(backend: Backend | None, counts, ops, value_fn,
                     index_of_segment) -> tuple[float, ...]:
    """(ops...) over a flattened (segment, element) space in one dispatch.

    counts[s] elements per segment; value_fn(seg, lo, hi) -> tuple of value
    arrays for that segment's element subrange.  index_of_segment maps the
    caller's segment handle list.
    """
    backend = _resolve(backend)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    total = int(offsets[-1])

    def eval_block(s, e):
        si = int(np.searchsorted(offsets, s, side="right") - 1)
        pos = s
        while pos < e:
            seg_end = min(e, int(offsets[si + 1]))
            lo = pos - int(offsets[si])
            hi = seg_end - int(offsets[si])
            yield value_fn(index_of_segment[si], lo, hi)
            pos = seg_end
            si += 1

    return _reduce_core(backend, total, ops, eval_block)


def reduce_multifab(backend: Backend | None, mf: MultiFab, ops, value_fn) -> tuple[float, ...]:
    """Mixed reduction over the valid cells of every local fab, one dispatch.

    value_fn(box_index, i, j, k) -> tuple of value arrays, box_index being
    the position in mf's local iteration order.
    """
    backend = _resolve(backend)
    boxes = mf.local_boxes()
    counts = [b.num_pts for b in boxes]

    def value(bi, lo, hi):
        i, j, k = _box_chunk_indices(boxes[bi], lo, hi)
        return value_fn(bi, i, j, k)

    return reduce_segmented(backend, counts, ops, value, list(range(len(boxes))))


def parallel_reduce_mixed(backend: Backend | None, source, ops, value_fn) -> tuple[float, ...]:
    """One-pass mixed reduction (any mix of sum/min/max) over a source.

    source may be a MultiFab (value_fn(box, i, j, k)), a Box
    (value_fn(i, j, k)), or an int range (value_fn(i)).  Empty sources
    return the identities (0, +inf, -inf per op kind).
    """
    if isinstance(source, MultiFab):
        return reduce_multifab(backend, source, ops, value_fn)
    if isinstance(source, Box):
        return reduce_box(backend, source, ops, value_fn)
    return reduce_range(backend, int(source), ops, value_fn)
