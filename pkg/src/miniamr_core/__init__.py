"""miniamr_core: desk-scale block-structured AMR framework.

Mesh and particle containers over a global integer index space, a kernel
portability layer with fused launches and mixed reductions, pooled memory
arenas, cached aggregated halo exchange over simulated ranks, a two-level
AMR hierarchy, and a heat-equation demo with benchmarks.
"""

from . import amr, arena, bench, comm, config, heat, inputs, kernels, mesh, particles, plotfile
from .arena import (Arena, AsyncArena, SystemArena, arena_alloc, arena_free,
                    arena_init, async_scope, the_arena, the_async_arena,
                    the_system_arena)
from .index_space import (CELL, NODE, Box, Geometry, IndexType, IntVect, box_diff,
                          box_list_diff, boxes_cover, coarsen, convert, empty_box,
                          grow, intersect, num_pts, periodic_shift_images, refine)
from .inputs import InputsTable, read_inputs
from .kernels import (CPU_PARALLEL, MAX, MIN, SERIAL, SUM, Backend, OptionTable,
                      SpecializedKernel, default_backend, dispatch_specialized,
                      parallel_for_box, parallel_for_fused, parallel_for_range,
                      parallel_reduce_mixed, reduce_multifab, set_default_backend)
from .mesh import (BoxArray, DistributionMapping, Fab, FabView, MFIter, MultiFab,
                   const_fab_view, decompose, fab_create, fab_setval, fab_view,
                   mfiter_tiles, multifab_define, set_default_tile_size,
                   tiles_of_box)
from .comm import (CommPlan, PlanKey, RankFailure, current_ctx, current_rank,
                   fill_boundary, global_reduce, index_mapped_copy, parallel_copy,
                   plan_build_fill_boundary, runtime_spawn)
from .particles import (AoSRefTile, LevelGrids, ParticleContainer, ParticleTile,
                        aos_ref_to_soa, id_decode, id_encode, particle_apply,
                        particle_reduce_mixed, soa_to_aos_ref)
from .amr import (LINEAR, PIECEWISE_CONSTANT, AmrMesh, TagField, average_down,
                  fill_patch, interp_coarse_to_fine, regrid)
from .heat import HeatParams, HeatResult, run_heat_demo
from .plotfile import PlotfileData, plotfile_to_multifabs, read_plotfile, write_plotfile

__version__ = "0.1.0"
