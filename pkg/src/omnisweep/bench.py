"""Timing harness for the warp stage and the full pipeline."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import RigConfig
from .pipeline import STAGES, PipelineConfig, band_grid, estimate_depth, rig_hypotheses
from .sweep import (DepthHypotheses, SphereGrid, build_table_combined, build_table_conventional,
                    feature_dims, gather_counter, stack_features, warp_combined, warp_conventional)
from .synth import Scene, render_rig

METHODS = ("conventional", "combined")
# seconds per frame reported for an embedded GPU; kept for context, never asserted
EMBEDDED_REFERENCE = {"conventional": 0.201, "combined": 0.065}


def thread_count() -> int:
    import numba
    return int(numba.get_num_threads())


@dataclass
class BenchResult:
    method: str
    op_count: int
    samples: list
    breakdown: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    valid_count: int = 0
    note: str = ""
    stage_sums: list = field(default_factory=list)  # per run, pipeline only

    @property
    def wall_time(self) -> float:
        return statistics.median(self.samples)

    @property
    def min_time(self) -> float:
        return min(self.samples)

    @property
    def max_time(self) -> float:
        return max(self.samples)


def _random_features(rig: RigConfig, stride: int, channels: int, seed: int):
    rng = np.random.default_rng(seed)
    return [rng.random((channels, h, w)).astype(np.float32) for h, w in feature_dims(rig, stride)]


def expected_op_count(method: str, hyp: DepthHypotheses, grid: SphereGrid) -> int:
    per_table = len(hyp) * grid.band_height * grid.width
    return (6 if method == "conventional" else 2) * per_table


def bench_sweep(rig: RigConfig, grid: SphereGrid, hyp: DepthHypotheses, method: str = "combined",
                runs: int = 5, stride: int = 1, channels: int = 1, seed: int = 0, tables=None) -> BenchResult:
    """Median wall time of the warp stage over ``runs`` timed runs after one warm-up.

    Both methods warp the same seeded random features. The conventional time
    includes stitching the per-camera spheres into the two group spheres.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if runs < 3:
        raise ValueError("runs must be >= 3")
    if tables is None:
        tables = (build_table_conventional(rig, grid, hyp, stride) if method == "conventional"
                  else build_table_combined(rig, grid, hyp, stride))
    if method == "conventional":
        per_cam, plan = tables
        op_count = sum(t.op_count for t in per_cam)
        valid = int(sum(np.count_nonzero(p >= 0) for p in plan.plans))

        def run(block):
            return warp_conventional(block, per_cam, plan)
    else:
        op_count = sum(t.op_count for t in tables)
        valid = sum(t.valid_count for t in tables)

        def run(block):
            return warp_combined(block, tables)
    expected = expected_op_count(method, hyp, grid)
    if op_count != expected:
        raise RuntimeError(f"{method}: op_count {op_count} != {expected}")

    block = stack_features(_random_features(rig, stride, channels, seed), feature_dims(rig, stride))
    run(block)  # warm-up: compilation and first-touch allocation
    samples = []
    for _ in range(runs):
        before = gather_counter.count
        t0 = time.perf_counter()
        out = run(block)
        samples.append(time.perf_counter() - t0)
        del out
        if gather_counter.count - before != op_count:
            raise RuntimeError(f"{method}: gather counter disagrees with op_count")
    config = {"D": len(hyp), "H": grid.band_height, "W": grid.width, "stride": stride,
              "channels": channels, "threads": thread_count()}
    note = "includes stitch" if method == "conventional" else ""
    return BenchResult(method, op_count, samples, {"warp": statistics.median(samples)}, config, valid, note)


def bench_pipeline(rig: RigConfig, scene: Scene, config: PipelineConfig | None = None, runs: int = 3,
                   supersample: int = 1, seed: int = 0, images=None) -> BenchResult:
    """Per-stage timing of depth estimation; rendering and table building are excluded."""
    if runs < 3:
        raise ValueError("runs must be >= 3")
    config = config or PipelineConfig()
    if images is None:
        images = render_rig(scene, rig, supersample, seed)
    grid, hyp = band_grid(rig), rig_hypotheses(rig)
    tables = build_table_combined(rig, grid, hyp, config.stride)
    estimate_depth(rig, images, config, tables)  # warm-up
    samples, sums, stage_samples = [], [], {s: [] for s in STAGES}
    for _ in range(runs):
        t0 = time.perf_counter()
        est = estimate_depth(rig, images, config, tables)
        samples.append(time.perf_counter() - t0)
        for s in STAGES:
            stage_samples[s].append(est.timings[s])
        sums.append(sum(est.timings.values()))
    breakdown = {s: statistics.median(v) for s, v in stage_samples.items()}
    cfg = {"D": len(hyp), "H": grid.band_height, "W": grid.width, "stride": config.stride,
           "channels": config.patch ** 2, "threads": thread_count()}
    return BenchResult("pipeline", sum(t.op_count for t in tables), samples, breakdown, cfg,
                       sum(t.valid_count for t in tables), "render and table build excluded", sums)


CSV_COLUMNS = (["method", "op_count", "valid_count", "wall_median_s", "wall_min_s", "wall_max_s", "runs",
                "D", "H", "W", "stride", "channels", "threads"]
               + [f"{s}_s" for s in STAGES] + ["note"])


def results_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in results:
        c = r.config
        writer.writerow([r.method, r.op_count, r.valid_count, f"{r.wall_time:.6f}", f"{r.min_time:.6f}",
                         f"{r.max_time:.6f}", len(r.samples), c.get("D"), c.get("H"), c.get("W"),
                         c.get("stride"), c.get("channels"), c.get("threads")]
                        + [f"{r.breakdown[s]:.6f}" if s in r.breakdown else "" for s in STAGES]
                        + [r.note])
    return buf.getvalue()
