"""Pooled memory arenas.

An Arena reserves slabs up front and serves aligned blocks from
size-segregated free lists (LIFO reuse per size class), so repeated
temporary allocations never hit the system allocator.  The AsyncArena
defers physical recycling of a freed block until every asynchronous task
launched in the block's allocating scope has completed; scope exit never
blocks.  A SystemArena performs a fresh system allocation per request and
exists for the pooled-vs-system benchmark and the `arena.kind = system`
switch.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import config

DEFAULT_ALIGN = 64
_GROW_UNIT = 1 << 20  # minimum slab growth for lazy arenas


@dataclass
class ArenaStats:
    reserved_bytes: int = 0
    in_use_bytes: int = 0
    alloc_calls: int = 0
    slab_growths: int = 0

    def snapshot(self) -> "ArenaStats":
        return ArenaStats(self.reserved_bytes, self.in_use_bytes,
                          self.alloc_calls, self.slab_growths)


class _Slab:
    __slots__ = ("mem", "base_addr", "capacity", "cursor")

    def __init__(self, capacity: int):
        self.mem = bytearray(capacity)
        self.base_addr = np.frombuffer(self.mem, dtype=np.uint8).__array_interface__["data"][0] if capacity else 0
        self.capacity = capacity
        self.cursor = 0


class Block:
    """An aligned window into an arena slab (or a standalone system buffer)."""

    __slots__ = ("arena", "buffer", "offset", "nbytes", "padded", "align", "freed")

    def __init__(self, arena, buffer, offset: int, nbytes: int, padded: int, align: int):
        self.arena = arena
        self.buffer = buffer
        self.offset = offset
        self.nbytes = nbytes
        self.padded = padded
        self.align = align
        self.freed = False

    @property
    def is_null(self) -> bool:
        return self.buffer is None

    @property
    def address(self) -> int:
        if self.is_null:
            return 0
        return np.frombuffer(self.buffer, dtype=np.uint8).__array_interface__["data"][0] + self.offset

    def as_array(self, dtype, count: int) -> np.ndarray:
        """1-D writable numpy view over the block's bytes (zero-copy)."""
        if self.is_null:
            return np.empty(0, dtype=dtype)
        return np.frombuffer(self.buffer, dtype=dtype, count=count, offset=self.offset)

    def free(self) -> None:
        if not self.freed:
            self.arena.free(self)


def _pad(nbytes: int, align: int) -> int:
    return -(-nbytes // align) * align


class Arena:
    """Slab-backed pool with size-segregated LIFO free lists.

    alloc/free are thread-safe.  in_use_bytes counts alignment padding, so
    it always equals the sum of outstanding padded block sizes.
    """

    kind = "pooled"

    def __init__(self, capacity_bytes: int = 0):
        if capacity_bytes < 0:
            raise ValueError("arena capacity must be >= 0")
        self._lock = threading.Lock()
        self._slabs: list[_Slab] = []
        self._free: dict[tuple[int, int], list[Block]] = {}
        self.stats = ArenaStats()
        if capacity_bytes > 0:
            self._slabs.append(_Slab(capacity_bytes))
            self.stats.reserved_bytes = capacity_bytes

    def alloc(self, nbytes: int, align: int = DEFAULT_ALIGN) -> Block:
        if nbytes < 0:
            raise ValueError("allocation size must be >= 0")
        if align <= 0 or (align & (align - 1)) != 0:
            raise ValueError(f"alignment must be a power of two, got {align}")
        if nbytes == 0:
            return Block(self, None, 0, 0, 0, align)
        padded = _pad(nbytes, align)
        key = (padded, align)
        with self._lock:
            self.stats.alloc_calls += 1
            stack = self._free.get(key)
            if stack:
                blk = stack.pop()
                blk.freed = False
                blk.nbytes = nbytes
                self.stats.in_use_bytes += padded
                return blk
            blk = self._carve(padded, align)
            blk.nbytes = nbytes
            self.stats.in_use_bytes += padded
            return blk

    def _carve(self, padded: int, align: int) -> Block:
        # bump-allocate from the newest slab, growing a slab when needed
        if self._slabs:
            slab = self._slabs[-1]
            start = self._aligned_cursor(slab, align)
            if start + padded <= slab.capacity:
                slab.cursor = start + padded
                return Block(self, slab.mem, start, padded, padded, align)
        growth = max(padded + align, _GROW_UNIT)
        slab = _Slab(growth)
        self._slabs.append(slab)
        self.stats.reserved_bytes += growth
        self.stats.slab_growths += 1
        start = self._aligned_cursor(slab, align)
        slab.cursor = start + padded
        return Block(self, slab.mem, start, padded, padded, align)

    @staticmethod
    def _aligned_cursor(slab: _Slab, align: int) -> int:
        addr = slab.base_addr + slab.cursor
        skew = (-addr) % align
        return slab.cursor + skew

    def free(self, block: Block) -> None:
        if block.is_null:
            return
        with self._lock:
            if block.freed:
                raise RuntimeError("double free of arena block")
            block.freed = True
            if config.debug:
                block.as_array(np.uint8, block.padded)[:] = 0xAB
            self._free.setdefault((block.padded, block.align), []).append(block)
            self.stats.in_use_bytes -= block.padded


class SystemArena:
    """Plain system-allocator path: every alloc is a fresh buffer."""

    kind = "system"

    def __init__(self):
        self._lock = threading.Lock()
        self.stats = ArenaStats()

    def alloc(self, nbytes: int, align: int = DEFAULT_ALIGN) -> Block:
        if nbytes == 0:
            return Block(self, None, 0, 0, 0, align)
        padded = _pad(nbytes, align) + align
        buf = np.empty(padded, dtype=np.uint8)
        addr = buf.__array_interface__["data"][0]
        offset = (-addr) % align
        with self._lock:
            self.stats.alloc_calls += 1
            self.stats.reserved_bytes += padded
            self.stats.in_use_bytes += padded
        blk = Block(self, buf, offset, nbytes, padded, align)
        return blk

    def free(self, block: Block) -> None:
        if block.freed:
            raise RuntimeError("double free of arena block")
        if block.is_null:
            return
        with self._lock:
            block.freed = True
            self.stats.in_use_bytes -= block.padded
            self.stats.reserved_bytes -= block.padded
        block.buffer = None  # drop the backing buffer to the system


class AsyncScope:
    """Tracks async task tokens and arena blocks allocated under it."""

    def __init__(self):
        self.tokens: list = []
        self._lock = threading.Lock()

    def add_token(self, token) -> None:
        with self._lock:
            self.tokens.append(token)

    def pending_tokens(self) -> list:
        with self._lock:
            return [t for t in self.tokens if not t.done()]


_scope_stack = threading.local()


def _stack() -> list:
    st = getattr(_scope_stack, "scopes", None)
    if st is None:
        st = []
        _scope_stack.scopes = st
    return st


def current_scope() -> AsyncScope | None:
    st = _stack()
    return st[-1] if st else None


def note_async_token(token) -> None:
    """Register a completion token with the innermost active async scope."""
    scope = current_scope()
    if scope is not None:
        scope.add_token(token)


class AsyncArena:
    """Arena whose freed blocks are recycled only after dependent tasks finish.

    A block allocated while an async scope is active remembers that scope; on
    free, recycling is deferred until every task token registered with the
    scope (at free time) has completed.  Freeing outside any scope recycles
    immediately.
    """

    kind = "async"

    def __init__(self, capacity_bytes: int = 0):
        self._arena = Arena(capacity_bytes)
        self._lock = threading.Lock()
        self._owner_scope: dict[int, AsyncScope] = {}
        self._deferred = 0
        self.early_recycles = 0  # incremented only if a recycle races a live task

    @property
    def stats(self) -> ArenaStats:
        return self._arena.stats

    @property
    def deferred_blocks(self) -> int:
        with self._lock:
            return self._deferred

    def alloc(self, nbytes: int, align: int = DEFAULT_ALIGN) -> Block:
        blk = self._arena.alloc(nbytes, align)
        blk.arena = self
        scope = current_scope()
        if scope is not None and not blk.is_null:
            with self._lock:
                self._owner_scope[id(blk)] = scope
        return blk

    def free(self, block: Block) -> None:
        if block.is_null:
            return
        if block.freed:
            raise RuntimeError("double free of arena block")
        with self._lock:
            scope = self._owner_scope.pop(id(block), None)
        pending = scope.pending_tokens() if scope is not None else []
        if not pending:
            self._recycle(block, ())
            return
        block.freed = True  # logically dead; storage held until tasks finish
        state = {"count": len(pending), "lock": threading.Lock()}
        with self._lock:
            self._deferred += 1

        def _one_done(_token, _state=state, _block=block):
            with _state["lock"]:
                _state["count"] -= 1
                last = _state["count"] == 0
            if last:
                with self._lock:
                    self._deferred -= 1
                _block.freed = False  # hand back to the pool's free path
                self._recycle(_block, pending)

        for t in pending:
            t.add_done_callback(_one_done)

    def _recycle(self, block: Block, guards) -> None:
        if any(not t.done() for t in guards):
            self.early_recycles += 1
        self._arena.free(block)
        block.arena = self

    def scope(self) -> "_ScopeCtx":
        return _ScopeCtx()


class _ScopeCtx:
    def __enter__(self) -> AsyncScope:
        scope = AsyncScope()
        _stack().append(scope)
        return scope

    def __exit__(self, *exc) -> bool:
        _stack().pop()
        return False


def async_scope(arena: AsyncArena, scope_body) -> None:
    """Run scope_body inside a fresh async scope of the given arena.

    Temporaries allocated from `arena` inside the body and freed at or
    before scope exit are recycled only once the tasks launched within the
    scope complete; the caller is never blocked.
    """
    with arena.scope():
        scope_body()


def arena_init(capacity_bytes: int) -> Arena:
    return Arena(capacity_bytes)


def arena_alloc(a, nbytes: int, align: int = DEFAULT_ALIGN) -> Block:
    return a.alloc(nbytes, align)


def arena_free(a, block: Block) -> None:
    a.free(block)


# Process-wide arena singletons.  The default pooled arena reserves half of
# the configured budget (inputs key `arena.init_size`); `arena.kind = system`
# swaps the default for the plain system allocator.
_DEFAULT_BUDGET = 256 << 20
_DEFAULT_KIND = "pooled"

_the_arena = None
_the_async_arena: AsyncArena | None = None
_the_system_arena: SystemArena | None = None
_singleton_lock = threading.Lock()


def configure_default_arena(budget_bytes: int | None = None, kind: str | None = None) -> None:
    """Set the default-arena budget and/or kind before first use."""
    global _the_arena, _DEFAULT_BUDGET, _DEFAULT_KIND
    with _singleton_lock:
        if budget_bytes is not None:
            _DEFAULT_BUDGET = int(budget_bytes)
        if kind is not None:
            if kind not in ("pooled", "system"):
                raise ValueError(f"arena.kind must be 'pooled' or 'system', got {kind!r}")
            _DEFAULT_KIND = kind
        _the_arena = None


def the_arena():
    global _the_arena
    with _singleton_lock:
        if _the_arena is None:
            _the_arena = SystemArena() if _DEFAULT_KIND == "system" \
                else Arena(_DEFAULT_BUDGET // 2)
        return _the_arena


def the_async_arena() -> AsyncArena:
    global _the_async_arena
    with _singleton_lock:
        if _the_async_arena is None:
            _the_async_arena = AsyncArena()
        return _the_async_arena


def the_system_arena() -> SystemArena:
    global _the_system_arena
    with _singleton_lock:
        if _the_system_arena is None:
            _the_system_arena = SystemArena()
        return _the_system_arena


def get_arena(kind: str):
    table = {"pooled": the_arena, "async": the_async_arena, "system": the_system_arena}
    if kind not in table:
        raise ValueError(f"unknown arena kind {kind!r}; expected one of {sorted(table)}")
    return table[kind]()


def format_stats(arena) -> str:
    s = arena.stats
    return (f"{arena.kind} arena: reserved={s.reserved_bytes}B in_use={s.in_use_bytes}B "
            f"allocs={s.alloc_calls} slab_growths={s.slab_growths}")
