"""Spherical sweeping: hypothesis spheres, ERP grids, mapping tables and warping.

Two sweeping strategies are provided. The conventional one warps every
camera onto its own full sphere per hypothesis (6 tables) and stitches the
three spheres of each group afterwards. The combined one resolves the stitch
once, at table-build time, so a frame needs only one table per camera group.
Both use the same stitch rule, so their outputs agree element for element.
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError, TableMismatchError
from .geometry import RigConfig

TABLE_MAGIC = b"OMSWTBL\x00"
TABLE_VERSION = 1
_HEADER = struct.Struct("<8sI16sIIIIIIBB")


class GatherCounter:
    """Counts budgeted gather-interpolate operations issued by warps."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.count += int(n)

    def reset(self) -> None:
        with self._lock:
            self.count = 0


gather_counter = GatherCounter()


@dataclass(frozen=True)
class SphereGrid:
    """Equirectangular grid of rig-frame unit directions.

    Column ``w`` has azimuth ``-pi + 2 pi w / width``; row ``h`` has polar
    angle ``pi h / height`` measured from rig +z. ``rows`` restricts the grid
    to a horizontal band of the full sphere.
    """

    width: int
    height: int
    rows: tuple
    directions: np.ndarray

    @property
    def band_height(self) -> int:
        return self.rows[1] - self.rows[0]

    @property
    def shape(self) -> tuple:
        return (self.band_height, self.width)

    @property
    def azimuths(self) -> np.ndarray:
        return -math.pi + 2 * math.pi * np.arange(self.width) / self.width

    @property
    def polar_angles(self) -> np.ndarray:
        return math.pi * np.arange(*self.rows) / self.height

    def band(self, rows) -> SphereGrid:
        return build_sphere_grid(self.width, self.height, rows)

    def key(self) -> tuple:
        return (self.width, self.height) + tuple(self.rows)


def build_sphere_grid(width: int, height: int, rows=None) -> SphereGrid:
    if width < 4 or height < 2:
        raise InvalidArgumentError("sphere grid needs width >= 4 and height >= 2")
    rows = (0, height) if rows is None else (int(rows[0]), int(rows[1]))
    if not 0 <= rows[0] < rows[1] <= height:
        raise InvalidArgumentError("row band must satisfy 0 <= first < last <= height")
    az = -math.pi + 2 * math.pi * np.arange(width) / width
    polar = math.pi * np.arange(*rows) / height
    sp = np.sin(polar)[:, None]
    dirs = np.empty((len(polar), width, 3))
    dirs[..., 0] = sp * np.cos(az)[None, :]
    dirs[..., 1] = sp * np.sin(az)[None, :]
    dirs[..., 2] = np.cos(polar)[:, None]
    dirs.flags.writeable = False
    return SphereGrid(width, height, rows, dirs)


@dataclass(frozen=True)
class DepthHypotheses:
    depths: np.ndarray
    min_depth: float
    max_depth: float

    @property
    def inverse(self) -> np.ndarray:
        return 1.0 / self.depths

    @property
    def inverse_step(self) -> float:
        return (1.0 / self.depths[0] - 1.0 / self.depths[-1]) / (len(self.depths) - 1)

    def __len__(self):
        return len(self.depths)

    def subset(self, start: int, stop: int) -> DepthHypotheses:
        """Consecutive slice of the hypotheses; tables built from it equal slices of full tables."""
        return DepthHypotheses(self.depths[start:stop], self.min_depth, self.max_depth)


def sample_hypotheses(min_depth: float = 0.5, max_depth: float = 100.0, d: int = 64) -> DepthHypotheses:
    """Hypothesis depths spaced uniformly in inverse depth, endpoints exact."""
    if not (0 < min_depth < max_depth) or not math.isfinite(max_depth):
        raise InvalidArgumentError("require 0 < min_depth < max_depth < inf")
    if d < 2:
        raise InvalidArgumentError("need at least two hypotheses")
    inv_near, inv_far = 1.0 / min_depth, 1.0 / max_depth
    inv = inv_near + np.arange(d) / (d - 1) * (inv_far - inv_near)
    depths = 1.0 / inv
    depths[0] = min_depth
    depths[-1] = max_depth
    depths.flags.writeable = False
    return DepthHypotheses(depths, float(min_depth), float(max_depth))


@dataclass(frozen=True)
class MappingTable:
    """Per-(depth, row, col) source camera and sub-pixel source coordinates.

    ``camera`` holds -1 where no camera of the table contributes. Coordinates
    are in feature-map pixels at ``stride``. Layout is depth-major.
    """

    group_id: int
    camera: np.ndarray
    src_x: np.ndarray
    src_y: np.ndarray
    stride: int
    grid_key: tuple
    source_camera: int | None = None

    @property
    def shape(self) -> tuple:
        return self.camera.shape

    @property
    def op_count(self) -> int:
        d, h, w = self.camera.shape
        return d * h * w

    @property
    def valid(self) -> np.ndarray:
        return self.camera >= 0

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.camera >= 0))

    def weights(self) -> np.ndarray:
        """Bilinear weights (w00, w01, w10, w11) stacked on a leading axis."""
        ax = self.src_x - np.floor(self.src_x)
        ay = self.src_y - np.floor(self.src_y)
        return np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay])

    def slice(self, start: int, stop: int) -> MappingTable:
        return MappingTable(self.group_id, self.camera[start:stop], self.src_x[start:stop],
                            self.src_y[start:stop], self.stride, self.grid_key, self.source_camera)


@dataclass(frozen=True)
class StitchPlan:
    """Winning camera per (group, depth, row, col); -1 where the group has no coverage."""

    plans: np.ndarray


@dataclass
class FeatureSphere:
    data: np.ndarray
    validity: np.ndarray

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def camera_ranking(rig: RigConfig, grid: SphereGrid, group: int) -> np.ndarray:
    """Group cameras ordered by angle between optical axis and grid direction.

    Smallest angle first; equal angles keep the lower camera index first.
    """
    cams = np.array(rig.groups[group])
    axes = np.stack([rig.cameras[c].optical_axis for c in cams])
    dots = np.einsum("hwk,ck->hwc", grid.directions, axes)
    order = np.argsort(-dots, axis=-1, kind="stable")
    return np.ascontiguousarray(cams[order].astype(np.int64))


def _extrinsics(rig: RigConfig):
    rot_t = np.ascontiguousarray(np.stack([c.pose.rotation.T for c in rig.cameras]))
    trans = np.ascontiguousarray(np.stack([c.pose.translation for c in rig.cameras]))
    return rot_t, trans, _kernels.as_intrinsics(rig.cameras)


def _check_inputs(rig, grid, hyp, stride):
    if not isinstance(grid, SphereGrid) or not isinstance(hyp, DepthHypotheses):
        raise InvalidArgumentError("expected a SphereGrid and DepthHypotheses")
    if stride < 1:
        raise InvalidArgumentError("stride must be >= 1")


def _camera_table(rig, grid, hyp, cam_index, stride, extr) -> MappingTable:
    shape = (len(hyp), grid.band_height, grid.width)
    cam = np.empty(shape, dtype=np.int8)
    sx = np.empty(shape)
    sy = np.empty(shape)
    rot_t, trans, intr = extr
    _kernels.build_single_camera(np.ascontiguousarray(grid.directions), np.asarray(hyp.depths),
                                 cam_index, rot_t, trans, intr, float(stride), cam, sx, sy)
    return MappingTable(rig.group_of(cam_index), cam, sx, sy, stride, grid.key(), cam_index)


def build_table_conventional(rig: RigConfig, grid: SphereGrid, hyp: DepthHypotheses,
                             stride: int = 1) -> tuple[list[MappingTable], StitchPlan]:
    """One full-sphere table per camera plus the plan that stitches them per group."""
    _check_inputs(rig, grid, hyp, stride)
    extr = _extrinsics(rig)
    tables = [_camera_table(rig, grid, hyp, i, stride, extr) for i in range(6)]
    valid = np.stack([t.camera >= 0 for t in tables])
    plans = np.empty((2,) + tables[0].shape, dtype=np.int8)
    for g in range(2):
        _kernels.stitch_plan(valid, camera_ranking(rig, grid, g), plans[g])
    return tables, StitchPlan(plans)


def build_table_combined(rig: RigConfig, grid: SphereGrid, hyp: DepthHypotheses,
                         stride: int = 1) -> list[MappingTable]:
    """Two tables, one per camera group, with the stitch resolved at build time."""
    _check_inputs(rig, grid, hyp, stride)
    rot_t, trans, intr = _extrinsics(rig)
    shape = (len(hyp), grid.band_height, grid.width)
    tables = []
    for g in range(2):
        cam = np.empty(shape, dtype=np.int8)
        sx = np.empty(shape)
        sy = np.empty(shape)
        _kernels.build_group(np.ascontiguousarray(grid.directions), np.asarray(hyp.depths),
                             camera_ranking(rig, grid, g), rot_t, trans, intr, float(stride),
                             cam, sx, sy)
        tables.append(MappingTable(g, cam, sx, sy, stride, grid.key()))
    return tables


def feature_dims(rig: RigConfig, stride: int) -> list[tuple[int, int]]:
    return [(c.height // stride, c.width // stride) for c in rig.cameras]


class FeatureBlock(NamedTuple):
    data: np.ndarray  # (6, C, hmax, wmax) float32
    dims: np.ndarray  # (6, 2) per-camera (h, w)


def _check_dims(dims, expected_dims) -> None:
    if expected_dims is None:
        return
    for i, (got, want) in enumerate(zip(dims, expected_dims)):
        if tuple(got) != tuple(want):
            raise InvalidArgumentError(f"camera {i}: feature size {tuple(got)} does not match {tuple(want)}")


def stack_features(features, expected_dims=None) -> FeatureBlock:
    """Pack six (C, h, w) or (h, w) arrays into one float32 (6, C, hmax, wmax) block."""
    if isinstance(features, FeatureBlock):
        _check_dims(features.dims, expected_dims)
        return features
    if len(features) != 6:
        raise InvalidArgumentError(f"expected 6 per-camera arrays, got {len(features)}")
    arrs = [np.asarray(f, dtype=np.float32) for f in features]
    arrs = [a[None] if a.ndim == 2 else a for a in arrs]
    channels = {a.shape[0] for a in arrs}
    if len(channels) != 1 or any(a.ndim != 3 for a in arrs):
        raise InvalidArgumentError("per-camera arrays must share a channel count")
    dims = np.array([a.shape[1:] for a in arrs], dtype=np.int64)
    _check_dims(dims, expected_dims)
    hmax, wmax = dims.max(axis=0)
    block = np.zeros((6, channels.pop(), hmax, wmax), dtype=np.float32)
    for i, a in enumerate(arrs):
        block[i, :, :a.shape[1], :a.shape[2]] = a
    return FeatureBlock(block, dims)


def warp_features(features, table: MappingTable, expected_dims=None) -> FeatureSphere:
    """Bilinear gather of per-camera features through one mapping table.

    ``features`` is either six per-camera arrays or a block from
    :func:`stack_features`.
    """
    block, dims = stack_features(features, expected_dims)
    out = np.empty((block.shape[1],) + table.shape, dtype=np.float32)
    _kernels.gather_bilinear(block, dims, table.camera, table.src_x, table.src_y, out)
    gather_counter.add(table.op_count)
    return FeatureSphere(out, table.camera >= 0)


def stitch(spheres: list[FeatureSphere], plan: StitchPlan, group: int) -> FeatureSphere:
    block = np.stack([s.data for s in spheres])
    p = plan.plans[group]
    out = np.empty(block.shape[1:], dtype=np.float32)
    _kernels.stitch_spheres(block, p, out)
    return FeatureSphere(out, p >= 0)


def warp_conventional(features, tables: list[MappingTable], plan: StitchPlan,
                      chunk: int = 8, expected_dims=None) -> list[FeatureSphere]:
    """Per-camera warps followed by per-group stitching, streamed over depth chunks."""
    block = stack_features(features, expected_dims)
    n_d = tables[0].shape[0]
    n_c = block.data.shape[1]
    outs = [np.empty((n_c,) + tables[0].shape, dtype=np.float32) for _ in range(2)]
    for start in range(0, n_d, chunk):
        stop = min(start + chunk, n_d)
        per_cam = [warp_features(block, t.slice(start, stop)) for t in tables]
        sub = StitchPlan(plan.plans[:, start:stop])
        for g in range(2):
            outs[g][:, start:stop] = stitch(per_cam, sub, g).data
    return [FeatureSphere(outs[g], plan.plans[g] >= 0) for g in range(2)]


def warp_combined(features, tables: list[MappingTable], expected_dims=None) -> list[FeatureSphere]:
    block = stack_features(features, expected_dims)
    return [warp_features(block, t) for t in tables]


def rotate_sphere_columns(vol: np.ndarray, k: int) -> np.ndarray:
    """Circular shift along the last (azimuth) axis; +k moves content to higher azimuth."""
    return np.roll(vol, int(k), axis=-1)


# ---------------------------------------------------------------------------
# table cache files


def save_tables(path, rig: RigConfig, grid: SphereGrid, hyp: DepthHypotheses,
                tables: list[MappingTable], plan: StitchPlan | None = None) -> None:
    kind = 0 if plan is None else 1
    stride = tables[0].stride
    header = _HEADER.pack(TABLE_MAGIC, TABLE_VERSION, rig.fingerprint().encode(),
                          grid.width, grid.height, grid.rows[0], grid.rows[1],
                          len(hyp), stride, kind, len(tables))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(hyp.depths, dtype="<f8").tobytes())
        for t in tables:
            src = -1 if t.source_camera is None else t.source_camera
            fh.write(struct.pack("<bb", t.group_id, src))
            fh.write(t.camera.astype("<i1").tobytes())
            fh.write(t.src_x.astype("<f8").tobytes())
            fh.write(t.src_y.astype("<f8").tobytes())
        if plan is not None:
            fh.write(plan.plans.astype("<i1").tobytes())


def load_tables(path, rig: RigConfig | None = None):
    """Read a table cache; returns (grid, hypotheses, tables, plan or None)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TableMismatchError("file too short for a table header")
    magic, version, rig_hash, width, height, r0, r1, n_d, stride, kind, n_tables = \
        _HEADER.unpack_from(raw)
    if magic != TABLE_MAGIC:
        raise TableMismatchError("not a mapping-table file")
    if version != TABLE_VERSION:
        raise TableMismatchError(f"unsupported table version {version}")
    if rig is not None and rig_hash.decode() != rig.fingerprint():
        raise TableMismatchError("table was built for a different rig")
    pos = _HEADER.size
    depths = np.frombuffer(raw, "<f8", n_d, pos).copy()
    pos += 8 * n_d
    grid = build_sphere_grid(width, height, (r0, r1))
    hyp = DepthHypotheses(depths, float(depths[0]), float(depths[-1]))
    shape = (n_d, r1 - r0, width)
    n = n_d * (r1 - r0) * width
    tables = []
    for _ in range(n_tables):
        group_id, src = struct.unpack_from("<bb", raw, pos)
        pos += 2
        cam = np.frombuffer(raw, "<i1", n, pos).reshape(shape).copy()
        pos += n
        sx = np.frombuffer(raw, "<f8", n, pos).reshape(shape).copy()
        pos += 8 * n
        sy = np.frombuffer(raw, "<f8", n, pos).reshape(shape).copy()
        pos += 8 * n
        tables.append(MappingTable(group_id, cam, sx, sy, stride, grid.key(),
                                   None if src < 0 else src))
    plan = None
    if kind == 1:
        plan = StitchPlan(np.frombuffer(raw, "<i1", 2 * n, pos).reshape((2,) + shape).copy())
    return grid, hyp, tables, plan
