"""End-to-end depth estimation: descriptors, combined sweep, cost, aggregation, readout."""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .geometry import RigConfig
from .matching import (CostVolume, DepthMap, aggregate_stages, compute_cost, downsample,
                       extract_descriptors, read_depth)
from .sweep import (DepthHypotheses, MappingTable, SphereGrid, build_sphere_grid, build_table_combined,
                    rotate_sphere_columns, sample_hypotheses, stack_features, warp_features)

STAGES = ("descriptor", "warp", "cost", "aggregate", "readout")


@dataclass(frozen=True)
class PipelineConfig:
    stride: int = 2
    patch: int = 5
    levels: int = 3
    radius: int = 2
    mode: str = "soft"
    beta: float = 16.0
    chunk: int = 8  # depth slices warped at once

    def __post_init__(self):
        if self.stride < 1:
            raise InvalidArgumentError("stride must be >= 1")
        if self.patch < 3 or self.patch % 2 == 0:
            raise InvalidArgumentError("patch must be odd and >= 3")
        if self.mode not in ("soft", "wta"):
            raise InvalidArgumentError(f"unknown readout mode {self.mode!r}")
        if self.chunk < 1:
            raise InvalidArgumentError("chunk must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Estimate:
    depth: DepthMap
    grid: SphereGrid
    hyp: DepthHypotheses
    stages: list = field(default_factory=list)  # per aggregation stage DepthMaps
    timings: dict = field(default_factory=dict)
    cost: CostVolume | None = None


class StageTimer:
    def __init__(self):
        self.seconds = defaultdict(float)

    def __call__(self, name):
        timer = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.seconds[name] += time.perf_counter() - self.t0

        return _Span()


def band_grid(rig: RigConfig) -> SphereGrid:
    return build_sphere_grid(rig.sphere_width, rig.sphere_height, rig.crop_rows)


def rig_hypotheses(rig: RigConfig) -> DepthHypotheses:
    return sample_hypotheses(rig.min_depth, rig.max_depth, rig.num_hypotheses)


def check_images(rig: RigConfig, images) -> list[np.ndarray]:
    if len(images) != 6:
        raise InvalidArgumentError(f"expected 6 images, got {len(images)}")
    out = []
    for i, (img, cam) in enumerate(zip(images, rig.cameras)):
        a = np.asarray(img, dtype=np.float64)
        if a.shape != (cam.height, cam.width):
            raise InvalidArgumentError(
                f"camera {i}: image is {a.shape[1]}x{a.shape[0]}, rig expects {cam.width}x{cam.height}")
        out.append(a)
    return out


def sweep_cost(descriptors, tables: list[MappingTable], chunk: int = 8, timer: StageTimer | None = None,
               expected_dims=None) -> CostVolume:
    """Cost volume from per-camera descriptors, warping ``chunk`` depth slices at a time."""
    timer = timer or StageTimer()
    block = stack_features(descriptors, expected_dims)
    shape = tables[0].shape
    scores = np.empty(shape)
    validity = np.empty(shape, dtype=bool)
    for start in range(0, shape[0], chunk):
        stop = min(start + chunk, shape[0])
        with timer("warp"):
            a, b = (warp_features(block, t.slice(start, stop)) for t in tables)
        with timer("cost"):
            vol = compute_cost(a, b)
            scores[start:stop] = vol.scores
            validity[start:stop] = vol.validity
    return CostVolume(scores, validity)


def readout(vol: CostVolume, hyp: DepthHypotheses, config: PipelineConfig, rotate: int = 0,
            timer: StageTimer | None = None) -> tuple[DepthMap, list[DepthMap]]:
    """Aggregate and read depth, optionally on a column-rotated copy of the volume.

    With ``rotate=k`` the volume is rotated by ``k`` columns first and the
    resulting maps are rotated back, so the output is comparable with
    ``rotate=0``.
    """
    timer = timer or StageTimer()
    if rotate:
        vol = CostVolume(rotate_sphere_columns(vol.scores, rotate), rotate_sphere_columns(vol.validity, rotate))
    with timer("aggregate"):
        stages = aggregate_stages(vol, config.levels, config.radius)
    with timer("readout"):
        maps = [read_depth(s, hyp, config.mode, config.beta) for s in stages]
    if rotate:
        maps = [DepthMap(rotate_sphere_columns(m.depths, -rotate), rotate_sphere_columns(m.confidence, -rotate))
                for m in maps]
    return maps[-1], maps


def estimate_depth(rig: RigConfig, images, config: PipelineConfig | None = None,
                   tables: list[MappingTable] | None = None, keep_cost: bool = False,
                   rotate: int = 0) -> Estimate:
    """Depth over the rig's horizon band from six fisheye images in [0, 1]."""
    config = config or PipelineConfig()
    grid = band_grid(rig)
    hyp = rig_hypotheses(rig)
    if tables is None:
        tables = build_table_combined(rig, grid, hyp, config.stride)
    elif tables[0].stride != config.stride or tables[0].grid_key != grid.key():
        raise InvalidArgumentError("mapping tables were built for a different grid or stride")
    timer = StageTimer()
    with timer("descriptor"):
        images = check_images(rig, images)
        desc = [extract_descriptors(img, config.patch, config.stride).data for img in images]
    vol = sweep_cost(desc, tables, config.chunk, timer)
    depth, maps = readout(vol, hyp, config, rotate, timer)
    timings = {name: timer.seconds[name] for name in STAGES}
    return Estimate(depth, grid, hyp, maps, timings, vol if keep_cost else None)


def band_intensity(rig: RigConfig, images, depth: DepthMap, hyp: DepthHypotheses, stride: int = 2,
                   tables: list[MappingTable] | None = None) -> np.ndarray:
    """Gray value per band pixel, sampled at the hypothesis nearest the estimated depth.

    Both groups are averaged where they both see the point; NaN where neither does.
    """
    images = check_images(rig, images)
    grid = band_grid(rig)
    if tables is None:
        tables = build_table_combined(rig, grid, hyp, stride)
    block = stack_features([downsample(img, stride)[None] for img in images])
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.rint((1.0 / depth.depths - hyp.inverse[0]) / (hyp.inverse[1] - hyp.inverse[0]))
    k = np.clip(np.nan_to_num(k), 0, len(hyp) - 1).astype(np.intp)
    yy, xx = np.indices(k.shape)
    total = np.zeros(k.shape)
    count = np.zeros(k.shape)
    for t in tables:
        picked = MappingTable(t.group_id, t.camera[k, yy, xx][None], t.src_x[k, yy, xx][None],
                              t.src_y[k, yy, xx][None], t.stride, t.grid_key)
        s = warp_features(block, picked)
        total += np.where(s.validity[0], s.data[0, 0], 0.0)
        count += s.validity[0]
    with np.errstate(invalid="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)
