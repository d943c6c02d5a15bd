"""Build configuration: spatial dimension, real type, debug checks.

The spatial dimension and the floating point width are fixed per "build"
(one configured process uses exactly one of each); tests that need a
different dimension switch it before constructing any objects.
"""

from __future__ import annotations

import numpy as np

_VALID_SPACEDIMS = (1, 2, 3)

spacedim: int = 3
real_dtype = np.dtype(np.float64)
# debug=True enables bounds checks on vectorized view indexing, poison fill
# of fresh fabs, and double-free detection in the arenas.
debug: bool = False

# signaling NaN with a recognizable payload; fills uninitialized fabs in debug
POISON_REAL = np.frombuffer(np.uint64(0x7FF4_0000_DEAD_BEEF).tobytes(), dtype=np.float64)[0]


def set_spacedim(d: int) -> None:
    global spacedim
    if d not in _VALID_SPACEDIMS:
        raise ValueError(f"spacedim must be one of {_VALID_SPACEDIMS}, got {d}")
    spacedim = d


def set_real_dtype(dt) -> None:
    global real_dtype
    dt = np.dtype(dt)
    if dt not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"real dtype must be float64 or float32, got {dt}")
    real_dtype = dt


def set_debug(flag: bool) -> None:
    global debug
    debug = bool(flag)
