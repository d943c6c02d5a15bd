"""Two-level heat-equation demo: explicit Euler, 2nd-order centered diffusion
on a periodic domain with a Gaussian initial condition.

Each step: fill ghosts (same-level exchange, coarse-to-fine fill_patch),
fused stencil sweep per level, then average down.  The free-space Gaussian
solution is the error oracle; it stays valid while the pulse remains at
least six final standard deviations away from the periodic boundary, which
the demo enforces.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import comm, config, kernels
from .amr import LINEAR, AmrMesh, TagField, average_down, fill_patch, regrid
from .index_space import Box, Geometry, box_list_diff, coarsen, intersect
from .inputs import InputsTable
from .mesh import MultiFab, _pad3, _region_slices
from .plotfile import write_plotfile


@dataclass
class HeatParams:
    n_cell: int | tuple = 96  # scalar broadcasts to every axis
    max_level: int = 1
    ref_ratio: int = 2
    blocking_factor: int = 8
    max_grid_size: int = 32
    diffusivity: float = 0.004
    sigma0: float = 0.06
    amplitude: float = 1.0
    t_final: float = 0.05
    cfl: float = 0.9
    dt: float | None = None
    nsteps: int | None = None
    tag_threshold: float = 1e-10
    plot_dir: str | None = None

    @staticmethod
    def from_inputs(inp: InputsTable) -> "HeatParams":
        p = HeatParams()
        if "amr.n_cell" in inp:
            cells = inp.get_ints("amr.n_cell")
            p.n_cell = cells[0] if len(cells) == 1 else tuple(cells)
        p.max_level = inp.get_int("amr.max_level", p.max_level)
        p.ref_ratio = inp.get_int("amr.ref_ratio", p.ref_ratio)
        p.blocking_factor = inp.get_int("amr.blocking_factor", p.blocking_factor)
        p.max_grid_size = inp.get_int("amr.max_grid_size", p.max_grid_size)
        p.diffusivity = inp.get_real("demo.diffusivity", p.diffusivity)
        p.sigma0 = inp.get_real("demo.sigma0", p.sigma0)
        p.amplitude = inp.get_real("demo.amplitude", p.amplitude)
        p.t_final = inp.get_real("demo.t_final", p.t_final)
        p.cfl = inp.get_real("demo.cfl", p.cfl)
        if "demo.dt" in inp:
            p.dt = inp.get_real("demo.dt")
        if "demo.nsteps" in inp:
            p.nsteps = inp.get_int("demo.nsteps")
        p.tag_threshold = inp.get_real("demo.tag_threshold", p.tag_threshold)
        if "demo.plot_dir" in inp:
            p.plot_dir = inp.get_string("demo.plot_dir")
        return p


class GaussianOracle:
    """Free-space diffusion of A * exp(-|x-x0|^2 / (2 sigma0^2))."""

    def __init__(self, amplitude: float, sigma0: float, center, diffusivity: float):
        self.amplitude = amplitude
        self.sigma0 = sigma0
        self.center = tuple(center)
        self.diffusivity = diffusivity

    def sigma_sq(self, t: float) -> float:
        return self.sigma0 ** 2 + 2.0 * self.diffusivity * t

    def eval_box(self, geom: Geometry, box: Box, t: float) -> np.ndarray:
        """(nx, ny, nz, 1) field of the analytic solution at cell centers."""
        s2 = self.sigma_sq(t)
        amp = self.amplitude * (self.sigma0 ** 2 / s2) ** (config.spacedim / 2.0)
        rsq = np.zeros(_pad3(box.extents, 1))
        for d in range(config.spacedim):
            idx = np.arange(box.lo[d], box.hi[d] + 1)
            x = geom.prob_lo[d] + (idx + 0.5) * geom.cell_size[d]
            shape = [1, 1, 1]
            shape[d] = idx.size
            rsq = rsq + ((x - self.center[d]) ** 2).reshape(shape)
        return (amp * np.exp(-rsq / (2.0 * s2)))[..., None]


@dataclass
class HeatResult:
    mesh: AmrMesh
    solution: list[MultiFab]
    oracle: GaussianOracle
    time: float
    dt: float
    nsteps: int
    integral_drift: float
    norms: dict = field(default_factory=dict)

    def error_field(self, level: int, gi: int) -> np.ndarray:
        mf = self.solution[level]
        fab = mf.fabs[gi]
        exact = self.oracle.eval_box(self.mesh.geom(level), mf.ba[gi], self.time)
        return fab.data[_region_slices(fab.box, mf.ba[gi])] - exact

    def error_norms(self, level: int, regions: list[Box] | None = None) -> tuple[float, float]:
        """(L-inf, L2) of the error on a level, optionally masked to regions."""
        mf = self.solution[level]
        geom = self.mesh.geom(level)
        vol = math.prod(geom.cell_size)
        linf, l2sq = 0.0, 0.0
        for gi in mf.local_indices:
            if regions is None:
                work = [mf.ba[gi]]
            else:
                work = [intersect(mf.ba[gi], r) for r in regions]
                work = [b for b in work if not b.is_empty]
            err_full = self.error_field(level, gi)
            for b in work:
                sl = _region_slices(mf.ba[gi], b)
                err = err_full[sl]
                if err.size:
                    linf = max(linf, float(np.abs(err).max()))
                    l2sq += float((err ** 2).sum()) * vol
        if comm.current_ctx().nranks > 1:
            linf, l2sq = comm.global_reduce([kernels.MAX, kernels.SUM], [linf, l2sq])
        return linf, math.sqrt(l2sq)


def _composite_norms(res: HeatResult) -> dict:
    """Error over the composite grid: finest data where refined."""
    mesh = res.mesh
    out = {}
    if len(res.solution) > 1:
        covered = [coarsen(b, mesh.ref_ratio) for b in res.solution[1].ba]
    else:
        covered = []
    linf, l2sq = 0.0, 0.0
    for level, mf in enumerate(res.solution):
        if level == len(res.solution) - 1:
            li, l2 = res.error_norms(level)
        else:
            uncovered: list[Box] = []
            for b in mf.ba:
                uncovered.extend(box_list_diff([b], covered))
            li, l2 = res.error_norms(level, uncovered)
        out[f"linf_level{level}"] = li
        out[f"l2_level{level}"] = l2
        linf = max(linf, li)
        l2sq += l2 ** 2
    out["linf"] = linf
    out["l2"] = math.sqrt(l2sq)
    return out


def _integral(mf: MultiFab, geom: Geometry, backend=None) -> float:
    vol = math.prod(geom.cell_size)
    arrays = mf.const_arrays()
    (total,) = kernels.reduce_multifab(backend, mf, [kernels.SUM],
                                       lambda bi, i, j, k: (arrays[bi][i, j, k],))
    if comm.current_ctx().nranks > 1:
        (total,) = comm.global_reduce([kernels.SUM], [total])
    return total * vol


def _advance_level(u: MultiFab, unew: MultiFab, dt: float, diffusivity: float,
                   geom: Geometry, backend=None) -> None:
    coef = [dt * diffusivity / geom.cell_size[d] ** 2 for d in range(config.spacedim)]
    old = u.const_arrays()
    new = unew.arrays()

    def body(bi, i, j, k):
        uo = old[bi]
        acc = uo[i, j, k].copy()
        if config.spacedim >= 1:
            acc += coef[0] * (uo[i + 1, j, k] - 2.0 * uo[i, j, k] + uo[i - 1, j, k])
        if config.spacedim >= 2:
            acc += coef[1] * (uo[i, j + 1, k] - 2.0 * uo[i, j, k] + uo[i, j - 1, k])
        if config.spacedim >= 3:
            acc += coef[2] * (uo[i, j, k + 1] - 2.0 * uo[i, j, k] + uo[i, j, k - 1])
        new[bi][i, j, k] = acc

    kernels.parallel_for_fused(backend, u, body)


def run_heat_demo(inputs: InputsTable | HeatParams | None = None,
                  backend=None) -> HeatResult:
    """Run the demo; returns final fields, error norms and conservation drift."""
    if inputs is None:
        p = HeatParams()
    elif isinstance(inputs, HeatParams):
        p = inputs
    else:
        p = HeatParams.from_inputs(inputs)

    dim = config.spacedim
    n_cell = [p.n_cell] * dim if isinstance(p.n_cell, int) else list(p.n_cell)
    mesh = AmrMesh(n_cell, [0.0] * dim, [1.0] * dim, [True] * dim,
                   max_level=p.max_level, ref_ratio=p.ref_ratio,
                   blocking_factor=p.blocking_factor, max_grid_size=p.max_grid_size)
    center = [0.5] * dim
    oracle = GaussianOracle(p.amplitude, p.sigma0, center, p.diffusivity)

    sigma_f = math.sqrt(oracle.sigma_sq(p.t_final))
    margin = min(min(c - lo, hi - c) for c, lo, hi in zip(center, [0.0] * dim, [1.0] * dim))
    if 6.0 * sigma_f > margin:
        raise ValueError(
            f"analytic window violated: 6*sigma_final={6 * sigma_f:.4f} exceeds "
            f"the {margin:.4f} distance to the periodic boundary")

    h_fine = min(mesh.geom(0).cell_size) / (p.ref_ratio if p.max_level >= 1 else 1)
    if p.diffusivity > 0:
        dt_max = h_fine ** 2 / (2.0 * p.diffusivity * dim)
        if p.dt is not None and p.dt > dt_max:
            raise ValueError(f"CFL violation: dt={p.dt} > {dt_max}")
        dt = p.dt if p.dt is not None else p.cfl * dt_max
    else:
        dt = p.dt if p.dt is not None else p.t_final / (p.nsteps or 10)
    nsteps = p.nsteps if p.nsteps is not None else max(1, math.ceil(p.t_final / dt))
    dt = p.t_final / nsteps

    def make_level_mfs(level: int) -> tuple[MultiFab, MultiFab]:
        ba, dm, geom = mesh.boxarray(level), mesh.dmap(level), mesh.geom(level)
        u = MultiFab(ba, dm, 1, 1, geom=geom)
        w = MultiFab(ba, dm, 1, 1, geom=geom)
        for gi in u.local_indices:
            fab = u.fabs[gi]
            fab.data[_region_slices(fab.box, ba[gi])] = oracle.eval_box(geom, ba[gi], 0.0)
        w.setval(0.0)
        return u, w

    u0, w0 = make_level_mfs(0)
    levels = [(u0, w0)]

    if p.max_level >= 1:
        tags = TagField(mesh, 0)
        for gi in u0.local_indices:
            fab = u0.fabs[gi]
            vals = np.abs(fab.data[_region_slices(fab.box, mesh.boxarray(0)[gi])][..., 0])
            mask = np.zeros(vals.shape, dtype=bool)
            mask |= vals > p.tag_threshold
            tags.arrays[gi][mask] = TagField.TAGGED
        ba1 = regrid(mesh, 0, tags)
        if len(ba1):
            mesh.set_level(1, ba1)
            levels.append(make_level_mfs(1))

    backend = backend if backend is not None else kernels.default_backend()
    i0 = _integral(levels[0][0], mesh.geom(0), backend)
    drift = 0.0
    t = 0.0

    if p.plot_dir:
        os.makedirs(p.plot_dir, exist_ok=True)
        write_plotfile(os.path.join(p.plot_dir, "plt00000"),
                       [lv[0] for lv in levels], ["u"], 0.0, p.ref_ratio)

    for step in range(nsteps):
        comm.fill_boundary(levels[0][0], mesh.geom(0), backend=backend)
        if len(levels) > 1:
            fill_patch(levels[1][0], levels[0][0], mesh.geom(1), mesh.geom(0),
                       p.ref_ratio, LINEAR, backend=backend)
        for level, (u, w) in enumerate(levels):
            _advance_level(u, w, dt, p.diffusivity, mesh.geom(level), backend)
        if len(levels) > 1:
            average_down(levels[1][1], levels[0][1], p.ref_ratio, backend)
        levels = [(w, u) for (u, w) in levels]
        t += dt
        total = _integral(levels[0][0], mesh.geom(0), backend)
        if i0 != 0:
            drift = max(drift, abs(total - i0) / abs(i0))

    res = HeatResult(mesh, [lv[0] for lv in levels], oracle, p.t_final, dt, nsteps, drift)
    res.norms = _composite_norms(res)
    if p.plot_dir:
        write_plotfile(os.path.join(p.plot_dir, f"plt{nsteps:05d}"),
                       res.solution, ["u"], p.t_final, p.ref_ratio)
    for _, w in levels:
        w.close()
    return res
