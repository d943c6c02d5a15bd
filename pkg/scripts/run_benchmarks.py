#!/usr/bin/env python3
"""Run the three microbenchmarks and print their reports.

Use --quick for a fast smoke pass; default sizes match the acceptance
criteria (512 boxes of 32^3, 1e4 arena cycles of a 256^3-cell temp, 1e6
particles).
"""

import argparse

from miniamr_core.bench import (bench_arena, bench_soa_vs_aos, bench_triad,
                                format_report)
from miniamr_core.kernels import CPU_PARALLEL, Backend


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    backend = Backend(CPU_PARALLEL)
    if args.quick:
        triad = bench_triad(nboxes=32, box_extent=16, reps=args.reps, backend=backend)
        arena = bench_arena(cycles=500, ncells=64 ** 3, reps=args.reps)
        soa = bench_soa_vs_aos(nparticles=100_000, reps=args.reps, backend=backend)
    else:
        triad = bench_triad(reps=args.reps, backend=backend)
        arena = bench_arena(reps=args.reps)
        soa = bench_soa_vs_aos(reps=args.reps, backend=backend)
    print(format_report("triad", triad))
    print(format_report("arena", arena))
    print(format_report("soa", soa))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
