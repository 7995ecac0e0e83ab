"""Pseudo-label generation from rectified adjacent-camera stereo pairs.

Each adjacent fisheye pair is resampled into two virtual pinholes that share
an orientation (x along the baseline, z along the bisector of the optical
axes). A stereo matcher produces a disparity map per pair, and the six
directional depth maps are splatted into the ERP band and fused by median.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import InvalidArgumentError
from .geometry import RigConfig, RigidPose, project
from .matching import DepthMap
from .sweep import SphereGrid


@dataclass(frozen=True)
class VirtualPinhole:
    width: int = 640
    height: int = 640
    hfov: float = 75.0
    vfov: float = 75.0
    pose: RigidPose = RigidPose.identity()

    @property
    def fx(self) -> float:
        return self.width / (2 * math.tan(math.radians(self.hfov) / 2))

    @property
    def fy(self) -> float:
        return self.height / (2 * math.tan(math.radians(self.vfov) / 2))

    @property
    def cx(self) -> float:
        return (self.width - 1) / 2.0

    @property
    def cy(self) -> float:
        return (self.height - 1) / 2.0

    def rays(self) -> np.ndarray:
        """Pinhole-frame rays (h, w, 3) with unit z component."""
        u, v = np.meshgrid(np.arange(self.width, dtype=np.float64),
                           np.arange(self.height, dtype=np.float64))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)

    def project(self, points: np.ndarray):
        """Pinhole-frame points (..., 3) -> pixels (..., 2) and in-frustum mask."""
        z = points[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * points[..., 0] / z + self.cx
            v = self.fy * points[..., 1] / z + self.cy
        ok = (z > 0) & (u > -0.5) & (u < self.width - 0.5) & (v > -0.5) & (v < self.height - 0.5)
        return np.stack([u, v], axis=-1), ok


@dataclass
class StereoPair:
    left: np.ndarray
    right: np.ndarray
    baseline: float
    focal: float
    pair_yaw: float
    cameras: tuple  # (left camera index, right camera index)
    left_pinhole: VirtualPinhole
    right_pinhole: VirtualPinhole
    left_valid: np.ndarray
    right_valid: np.ndarray


@dataclass
class PanoramaLabel:
    depth: np.ndarray
    support_count: np.ndarray
    source: np.ndarray  # pair yaw (degrees) of the contributor nearest the fused value; NaN if none

    @property
    def valid(self) -> np.ndarray:
        return self.support_count > 0

    def as_depth_map(self) -> DepthMap:
        return DepthMap(np.where(self.valid, self.depth, np.nan))


def adjacent_pairs(n: int = 6) -> list[tuple[int, int]]:
    return [(i, (i + 1) % n) for i in range(n)]


def pinhole_poses(rig: RigConfig, cam_i: int, cam_j: int) -> tuple[RigidPose, RigidPose]:
    ci, cj = rig.cameras[cam_i], rig.cameras[cam_j]
    x = cj.pose.translation - ci.pose.translation
    x = x / np.linalg.norm(x)
    bis = ci.optical_axis + cj.optical_axis
    z = bis - (bis @ x) * x
    z = z / np.linalg.norm(z)
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=1)
    return RigidPose(rot, ci.pose.translation), RigidPose(rot, cj.pose.translation)


def _resample(image: np.ndarray, cam, pinhole: VirtualPinhole):
    rays_rig = pinhole.rays() @ pinhole.pose.rotation.T
    rays_cam = rays_rig @ cam.pose.rotation
    uv, ok = project(cam, rays_cam)
    coords = np.stack([uv[..., 1], uv[..., 0]])
    out = ndimage.map_coordinates(np.asarray(image, dtype=np.float64), coords, order=1, mode="nearest")
    return np.where(ok, out, 0.0), ok


def rectify_pair(rig: RigConfig, cam_i: int, cam_j: int, vp: VirtualPinhole | None = None, *,
                 images) -> StereoPair:
    """Rectified pinhole pair for adjacent cameras ``cam_i`` (left) and ``cam_j`` (right).

    ``images`` holds the six fisheye images indexed by camera.
    """
    if (cam_j - cam_i) % 6 not in (1, 5):
        raise InvalidArgumentError(f"cameras {cam_i} and {cam_j} are not adjacent")
    vp = vp or VirtualPinhole()
    pose_l, pose_r = pinhole_poses(rig, cam_i, cam_j)
    left_vp = VirtualPinhole(vp.width, vp.height, vp.hfov, vp.vfov, pose_l)
    right_vp = VirtualPinhole(vp.width, vp.height, vp.hfov, vp.vfov, pose_r)
    left, lok = _resample(images[cam_i], rig.cameras[cam_i], left_vp)
    right, rok = _resample(images[cam_j], rig.cameras[cam_j], right_vp)
    baseline = float(np.linalg.norm(pose_r.translation - pose_l.translation))
    z = pose_l.rotation[:, 2]
    yaw = math.degrees(math.atan2(z[1], z[0]))
    return StereoPair(left, right, baseline, left_vp.fx, yaw, (cam_i, cam_j), left_vp, right_vp, lok, rok)


# ---------------------------------------------------------------------------
# stereo matching


def ncc_volume(left: np.ndarray, right: np.ndarray, max_disp: int, patch: int,
               eps: float = 1e-4) -> np.ndarray:
    """NCC of left(x) against right(x - d) for d = 0..max_disp, NaN where undefined."""
    left = np.ascontiguousarray(left, dtype=np.float64)
    right = np.ascontiguousarray(right, dtype=np.float64)
    vol = np.empty((max_disp + 1,) + left.shape, dtype=np.float32)
    _kernels.ncc_volume(left, right, int(max_disp), patch // 2, float(eps), vol)
    return vol


def _wta_subpixel(vol: np.ndarray, min_score: float = -1.0, right_reference: bool = False) -> np.ndarray:
    out = np.empty(vol.shape[1:])
    _kernels.wta_subpixel(vol, float(min_score), right_reference, out)
    return out


def block_match(pair: StereoPair, max_disp: int, patch: int = 7, lr_tolerance: float = 1.0,
                min_score: float = 0.5) -> np.ndarray:
    """NCC winner-take-all disparity with parabola refinement and a left-right check.

    Returns a left-image disparity map; occluded, textureless and out-of-view
    pixels are NaN, as are matches whose NCC is below ``min_score`` (these
    are typically pixels whose true match has left the right image).
    """
    if max_disp < 1:
        raise InvalidArgumentError("max_disp must be >= 1")
    if patch < 3 or patch % 2 == 0:
        raise InvalidArgumentError("patch must be odd and >= 3")
    vol = ncc_volume(pair.left, pair.right, max_disp, patch)
    disp_l = _wta_subpixel(vol, min_score)
    disp_r = _wta_subpixel(vol, right_reference=True)

    w = pair.left.shape[1]
    xs = np.arange(w)[None, :]
    with np.errstate(invalid="ignore"):
        xr = np.round(xs - disp_l)
    inside = np.isfinite(xr) & (xr >= 0) & (xr < w)
    xr_i = np.where(inside, xr, 0).astype(np.int64)
    back = np.take_along_axis(disp_r, xr_i, axis=1)
    consistent = inside & (np.abs(disp_l - back) <= lr_tolerance)

    lv = ndimage.binary_erosion(pair.left_valid, np.ones((patch, patch)), border_value=0)
    rv = ndimage.binary_erosion(pair.right_valid, np.ones((patch, patch)), border_value=0)
    rv_at = np.take_along_axis(rv, xr_i, axis=1) & inside
    ok = consistent & lv & rv_at & np.isfinite(disp_l)
    return np.where(ok, disp_l, np.nan)


def fill_holes(disparity: np.ndarray, valid_region: np.ndarray | None = None) -> np.ndarray:
    """Fill invalid pixels row by row with the smaller (background) of the nearest valid neighbors."""
    disp = np.array(disparity, dtype=np.float64)
    h, w = disp.shape
    valid = np.isfinite(disp)
    idx = np.where(valid, np.arange(w)[None, :], -1)
    left_idx = np.maximum.accumulate(idx, axis=1)
    idx_r = np.where(valid, np.arange(w)[None, :], w)
    right_idx = np.minimum.accumulate(idx_r[:, ::-1], axis=1)[:, ::-1]
    rows = np.arange(h)[:, None]
    lval = np.where(left_idx >= 0, disp[rows, np.clip(left_idx, 0, w - 1)], np.inf)
    rval = np.where(right_idx < w, disp[rows, np.clip(right_idx, 0, w - 1)], np.inf)
    fill = np.minimum(lval, rval)
    out = np.where(valid, disp, np.where(np.isfinite(fill), fill, np.nan))
    if valid_region is not None:
        out = np.where(valid_region, out, np.nan)
    return out


def disparity_to_depth(disparity: np.ndarray, pair: StereoPair) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        z = pair.focal * pair.baseline / disparity
    return np.where(np.isfinite(z) & (disparity > 0), z, np.nan)


# ---------------------------------------------------------------------------
# fusion


def _erp_index(points: np.ndarray, grid: SphereGrid, crop):
    dist = np.linalg.norm(points, axis=-1)
    az = np.arctan2(points[..., 1], points[..., 0])
    polar = np.arccos(np.clip(points[..., 2] / dist, -1.0, 1.0))
    col = np.round((az + math.pi) * grid.width / (2 * math.pi)).astype(np.int64) % grid.width
    row = np.round(polar * grid.height / math.pi).astype(np.int64)
    first, last = crop
    ok = (row >= first) & (row < last)
    return row - first, col, dist, ok


def view_depth_along_rays(depth: np.ndarray, pinhole: VirtualPinhole, dirs: np.ndarray,
                          min_depth: float, max_depth: float, samples: int = 192,
                          thickness: float = 0.05):
    """Distance from the rig origin along unit ``dirs`` to one view's depth surface.

    The ray is marched from near to far (uniform in inverse depth). A hit is
    the first sample lying behind the surface seen at its pixel by less than
    ``thickness`` (relative) plus one march step; it is refined by
    intersecting the ray with that pixel's constant-z plane. Samples far
    behind the surface mean the ray is passing behind an occluder.

    Returns ``(t, hit, fallback)``: hit distances (NaN elsewhere), the hit
    mask, and for rays hidden from this view the distance to the surface
    seen along the ray's far end (NaN if that is outside the view).
    """
    rot, trans = pinhole.pose.rotation, pinhole.pose.translation
    d_p = dirs @ rot
    c_p = -(rot.T @ trans)
    h, w = depth.shape
    shape = dirs.shape[:-1]
    forward = d_p[..., 2] > 1e-9

    def lookup(t):
        pts = c_p + t * d_p
        uv, inside = pinhole.project(pts)
        col = np.clip(np.round(np.nan_to_num(uv[..., 0])), 0, w - 1).astype(np.int64)
        row = np.clip(np.round(np.nan_to_num(uv[..., 1])), 0, h - 1).astype(np.int64)
        z = depth[row, col]
        return pts[..., 2], z, inside & np.isfinite(z) & forward

    hit_z = np.full(shape, np.nan)
    found = np.zeros(shape, dtype=bool)
    ts = 1.0 / np.linspace(1.0 / min_depth, 1.0 / max_depth, samples)
    prev = ts[0]
    for t in ts:
        pz, z, ok = lookup(t)
        gap = pz - z
        tol = thickness * z + 1.5 * (t - prev) * d_p[..., 2]
        new = ok & ~found & (gap >= 0) & (gap <= tol)
        hit_z = np.where(new, z, hit_z)
        found |= new
        prev = t
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hit = (hit_z - c_p[2]) / d_p[..., 2]
        _, z_far, ok_far = lookup(max_depth)
        t_far = (z_far - c_p[2]) / d_p[..., 2]
    found &= np.isfinite(t_hit) & (t_hit > 0)
    fallback = np.where(~found & ok_far & (t_far > 0), t_far, np.nan)
    return np.where(found, t_hit, np.nan), found, fallback


def fuse_panorama(disparities, pairs, rig: RigConfig, grid: SphereGrid, crop=None,
                  min_depth: float | None = None, max_depth: float | None = None,
                  fill: bool = True) -> PanoramaLabel:
    """Fuse directional depth maps into the ERP band by per-pixel median.

    Every band ray collects one candidate from each view whose frustum
    contains it. Candidates are ranked: rays that hit measured disparities
    come first, then rays that only hit hole-filled disparities (``fill``),
    then views in which the ray is hidden behind an occluder. The median is
    taken over the best available tier; pixels without candidates stay
    invalid.
    """
    crop = tuple(crop) if crop is not None else tuple(grid.rows)
    min_depth = rig.min_depth if min_depth is None else min_depth
    max_depth = rig.max_depth if max_depth is None else max_depth
    dirs = grid.directions[crop[0] - grid.rows[0]:crop[1] - grid.rows[0]]
    tiers = np.full((3, len(pairs)) + dirs.shape[:-1], np.nan)
    for k, (disp, pair) in enumerate(zip(disparities, pairs)):
        disp = np.asarray(disp, dtype=np.float64)
        z = disparity_to_depth(disp, pair)
        tiers[0, k], _, tiers[2, k] = view_depth_along_rays(z, pair.left_pinhole, dirs, min_depth, max_depth)
        if fill and not np.all(np.isfinite(disp)):
            dense = disparity_to_depth(fill_holes(disp, pair.left_valid & pair.right_valid), pair)
            tiers[1, k], _, fallback = view_depth_along_rays(dense, pair.left_pinhole, dirs,
                                                             min_depth, max_depth)
            tiers[2, k] = np.where(np.isfinite(tiers[2, k]), tiers[2, k], fallback)
    stack = tiers[2]
    for tier in (tiers[1], tiers[0]):
        stack = np.where(np.isfinite(tier).any(axis=0)[None], tier, stack)
    stack = np.clip(stack, min_depth, max_depth)
    support = np.sum(np.isfinite(stack), axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fused = np.nanmedian(stack, axis=0)
    yaws = np.array([p.pair_yaw for p in pairs])
    dev = np.where(np.isfinite(stack), np.abs(stack - fused[None]), np.inf)
    nearest = np.argmin(dev, axis=0)
    source = np.where(support > 0, yaws[nearest], np.nan)
    return PanoramaLabel(np.where(support > 0, fused, np.nan), support, source)


def reproject_panorama(label: PanoramaLabel, grid: SphereGrid, pair: StereoPair, crop=None,
                       iterations: int = 8) -> np.ndarray:
    """Disparity the fused panorama implies in the left image of ``pair``.

    Solves ``|c + t r| = D(dir(c + t r))`` by fixed-point iteration, with ``c``
    the left pinhole center and ``D`` the panorama depth (nearest ERP pixel).
    """
    crop = tuple(crop) if crop is not None else tuple(grid.rows)
    rays = pair.left_pinhole.pose.apply(pair.left_pinhole.rays()) - pair.left_pinhole.pose.translation
    norm = np.linalg.norm(rays, axis=-1)
    r = rays / norm[..., None]
    c = pair.left_pinhole.pose.translation
    cr = r @ c
    cc = c @ c
    depth = label.depth
    t = np.full(r.shape[:-1], 5.0)
    ok = np.ones(r.shape[:-1], dtype=bool)
    for _ in range(iterations):
        p = c + t[..., None] * r
        row, col, _, inside = _erp_index(p, grid, crop)
        d = depth[np.clip(row, 0, depth.shape[0] - 1), col]
        ok = inside & np.isfinite(d)
        d = np.where(ok, d, 1.0)
        t = -cr + np.sqrt(np.maximum(cr * cr - cc + d * d, 0.0))
    z = t / norm  # pinhole rays have unit z
    with np.errstate(divide="ignore"):
        disp = pair.focal * pair.baseline / z
    return np.where(ok & pair.left_valid, disp, np.nan)


def pseudo_label(rig: RigConfig, images, grid: SphereGrid, crop=None, vp: VirtualPinhole | None = None,
                 patch: int = 7, max_disp: int | None = None, matcher=None, dense: bool = True,
                 disparities: dict | None = None, workers: int | None = None):
    """Full teacher pipeline: rectify six pairs, match, fuse.

    ``matcher(pair, max_disp, patch)`` may replace :func:`block_match`;
    ``disparities`` maps ``(left, right)`` camera pairs to precomputed
    disparity maps and skips matching for those pairs. Returns the label plus
    the pairs and disparities used.
    """
    vp = vp or VirtualPinhole()
    matcher = matcher or block_match
    disparities = disparities or {}

    def run(ij):
        pair = rectify_pair(rig, ij[0], ij[1], vp, images=images)
        if ij in disparities:
            disp = np.asarray(disparities[ij], dtype=np.float64)
            if disp.shape != pair.left.shape:
                raise InvalidArgumentError(f"pair {ij}: disparity is {disp.shape}, pinhole is {pair.left.shape}")
            return pair, disp
        md = max_disp or int(math.ceil(pair.focal * pair.baseline / rig.min_depth))
        return pair, matcher(pair, md, patch)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run, adjacent_pairs()))
    pairs = [r[0] for r in results]
    disps = [r[1] for r in results]
    return fuse_panorama(disps, pairs, rig, grid, crop, fill=dense), pairs, disps
