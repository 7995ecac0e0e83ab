"""Gather counts and warp time: six per-camera sweeps plus stitching vs two combined tables.

    python3 demos/sweep_savings.py [--grid 480x240] [--d 32]
"""

import argparse
from fractions import Fraction

from omnisweep.bench import bench_sweep
from omnisweep.geometry import default_hexagon_rig
from omnisweep.sweep import build_sphere_grid, sample_hypotheses

ap = argparse.ArgumentParser()
ap.add_argument("--grid", default="480x240")
ap.add_argument("--d", type=int, default=32)
args = ap.parse_args()
w, h = (int(x) for x in args.grid.split("x"))

rig = default_hexagon_rig()
grid = build_sphere_grid(w, h)
hyp = sample_hypotheses(rig.min_depth, rig.max_depth, args.d)

conv = bench_sweep(rig, grid, hyp, "conventional", runs=3)
comb = bench_sweep(rig, grid, hyp, "combined", runs=3)

print(f"grid {w}x{h}, {args.d} hypotheses")
print(f"  conventional: {conv.op_count:>12,} gathers  {conv.wall_time * 1e3:8.1f} ms ({conv.note})")
print(f"  combined:     {comb.op_count:>12,} gathers  {comb.wall_time * 1e3:8.1f} ms")
print(f"  gather ratio {Fraction(comb.op_count, conv.op_count)}, speedup {conv.wall_time / comb.wall_time:.2f}x")
