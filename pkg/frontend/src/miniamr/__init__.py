"""miniamr: scripting bridge over the miniamr-core framework.

Importing this module registers the core types for script use (boxes,
geometry, distributed fields, particle containers) and adds zero-copy
array-protocol views of fab storage and particle columns.  Fab views are
zero-based per local block; native indexing is global.
"""

import sys

from miniamr_core import (CELL, NODE, Backend, Box, BoxArray, DistributionMapping,
                          Fab, FabView, Geometry, IndexType, IntVect, MFIter,
                          MultiFab, ParticleContainer, ParticleTile, coarsen,
                          config, convert, decompose, fill_boundary, grow,
                          intersect, multifab_define, parallel_reduce_mixed,
                          refine)
from miniamr_core.kernels import MAX, MIN, SUM

from .bridge import (BoundArray4, BoundSoA, MfiAccessor, PtiAccessor, array_view,
                     multifab_iter, particle_iter, particle_soa_view)

__version__ = "0.1.0"


def register_types():
    """Return the module with all native types registered for scripting.

    Registration happens at import (the pre-compiled-bindings analog); this
    hook exists so scripts can ask for the surface explicitly.
    """
    return sys.modules[__name__]
