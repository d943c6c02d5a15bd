"""Command line entry points.

    miniamr heat --inputs FILE [key=value ...]
    miniamr bench triad|arena|soa [key=value ...]

Flags: --arena-stats, --comm-stats, --plotfile-dir DIR.
"""

from __future__ import annotations

import argparse
import sys

from . import arena, bench, comm, config, kernels, mesh
from .heat import HeatParams, run_heat_demo
from .inputs import InputsTable, read_inputs


def _apply_global_keys(inp: InputsTable) -> kernels.Backend:
    if "spacedim" in inp:
        config.set_spacedim(inp.get_int("spacedim"))
    if "real" in inp:
        config.set_real_dtype("float32" if inp.get_string("real") == "single" else "float64")
    if "debug" in inp:
        config.set_debug(inp.get_bool("debug"))
    if "arena.init_size" in inp or "arena.kind" in inp:
        arena.configure_default_arena(
            inp.get_int("arena.init_size") if "arena.init_size" in inp else None,
            inp.get_string("arena.kind") if "arena.kind" in inp else None)
    if "tile_size" in inp:
        mesh.set_default_tile_size(inp.get_ints("tile_size"))
    kind = inp.get_string("backend", kernels.CPU_PARALLEL)
    nworkers = inp.get_int("nworkers", 0) or None
    backend = kernels.Backend(kind, nworkers)
    kernels.set_default_backend(backend)
    return backend


def _epilogue(args) -> None:
    if args.arena_stats:
        print(arena.format_stats(arena.the_arena()))
        print(arena.format_stats(arena.the_async_arena()))
        print(arena.format_stats(arena.the_system_arena()))
    if args.comm_stats:
        print(comm.current_ctx().bus.format_stats())


def cmd_heat(args) -> int:
    inp = read_inputs(args.inputs, args.overrides)
    backend = _apply_global_keys(inp)
    if args.plotfile_dir:
        inp._set("demo.plot_dir", [args.plotfile_dir])
    nranks = inp.get_int("nranks", 1)
    if nranks > 1:
        results = comm.runtime_spawn(nranks, lambda ctx: run_heat_demo(inp, backend=backend))
        res = results[0]
    else:
        res = run_heat_demo(inp, backend=backend)
    n_cell = res.mesh.geom(0).domain.extents
    print(f"heat demo: n_cell={'x'.join(str(n) for n in n_cell)} ranks={nranks} "
          f"levels={len(res.solution)} steps={res.nsteps} dt={res.dt:.3e}")
    for k in sorted(res.norms):
        print(f"  {k:>14}: {res.norms[k]:.6e}")
    print(f"  integral drift: {res.integral_drift:.3e}")
    _epilogue(args)
    return 0


def cmd_bench(args) -> int:
    inp = read_inputs(None, args.overrides)
    backend = _apply_global_keys(inp)
    reps = inp.get_int("bench.reps", 5)
    if args.which == "triad":
        rep = bench.bench_triad(inp.get_int("bench.nboxes", 512),
                                inp.get_int("bench.box_extent", 32),
                                reps=reps, backend=backend)
    elif args.which == "arena":
        rep = bench.bench_arena(inp.get_int("bench.cycles", 10_000),
                                inp.get_int("bench.ncells", 256 ** 3), reps=reps)
    else:
        rep = bench.bench_soa_vs_aos(inp.get_int("bench.nparticles", 1_000_000),
                                     reps=reps, backend=backend)
    print(bench.format_report(args.which, rep))
    _epilogue(args)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="miniamr",
                                 description="desk-scale block-structured AMR framework")
    sub = ap.add_subparsers(dest="command", required=True)

    heat = sub.add_parser("heat", help="two-level heat equation demo")
    heat.add_argument("--inputs", default=None, help="inputs file path")
    heat.add_argument("--plotfile-dir", default=None, help="write plotfiles here")
    heat.add_argument("--arena-stats", action="store_true")
    heat.add_argument("--comm-stats", action="store_true")
    heat.add_argument("overrides", nargs="*", help="key=value overrides")
    heat.set_defaults(fn=cmd_heat)

    bn = sub.add_parser("bench", help="microbenchmarks")
    bn.add_argument("which", choices=["triad", "arena", "soa"])
    bn.add_argument("--arena-stats", action="store_true")
    bn.add_argument("--comm-stats", action="store_true")
    bn.add_argument("overrides", nargs="*", help="key=value overrides")
    bn.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
