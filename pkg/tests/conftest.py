import numpy as np
import pytest

from miniamr_core import config, kernels
from miniamr_core.index_space import Box, Geometry, IntVect
from miniamr_core.mesh import BoxArray


@pytest.fixture(autouse=True)
def _restore_config():
    yield
    config.set_spacedim(3)
    config.set_real_dtype(np.float64)
    config.set_debug(False)


@pytest.fixture
def serial():
    return kernels.Backend(kernels.SERIAL)


@pytest.fixture
def parallel():
    return kernels.Backend(kernels.CPU_PARALLEL, 2)


def make_box(lo, ext):
    return Box(lo, [l + e - 1 for l, e in zip(lo, ext)])


def random_box(rng, dim, max_abs=10, max_extent=8):
    lo = [int(rng.integers(-max_abs, max_abs + 1)) for _ in range(dim)]
    ext = [int(rng.integers(1, max_extent + 1)) for _ in range(dim)]
    return make_box(lo, ext)


def random_decomposition(rng, domain, max_boxes, min_extent=2):
    """Recursively split a domain into disjoint boxes covering it."""
    boxes = [domain]
    while len(boxes) < max_boxes:
        cand = [n for n, b in enumerate(boxes) if max(b.extents) >= 2 * min_extent]
        if not cand or rng.random() < 0.15:
            break
        n = int(rng.choice(cand))
        b = boxes.pop(n)
        axes = [d for d, e in enumerate(b.extents) if e >= 2 * min_extent]
        d = int(rng.choice(axes))
        cut = int(rng.integers(b.lo[d] + min_extent, b.hi[d] - min_extent + 2))
        lo1, hi1 = list(b.lo), list(b.hi)
        lo2, hi2 = list(b.lo), list(b.hi)
        hi1[d] = cut - 1
        lo2[d] = cut
        boxes.extend([Box(lo1, hi1, b.ixtype), Box(lo2, hi2, b.ixtype)])
    order = sorted(range(len(boxes)), key=lambda n: boxes[n].lo.comps)
    return BoxArray([boxes[n] for n in order])


def fill_from_global(mf, gdata, ba):
    """Copy global-array data into each fab's valid region."""
    from miniamr_core.mesh import _region_slices
    dim = gdata.ndim
    for gi in mf.local_indices:
        b = ba[gi]
        src = gdata[tuple(slice(b.lo[d], b.hi[d] + 1) for d in range(dim))]
        fab = mf.fabs[gi]
        fab.data[_region_slices(fab.box, b) + (0,)] = src.reshape(fab.data[_region_slices(fab.box, b) + (0,)].shape)
