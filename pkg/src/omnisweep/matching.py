"""Descriptors, cosine-similarity cost volumes, aggregation and depth readout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import InvalidArgumentError
from .sweep import DepthHypotheses, FeatureSphere, SphereGrid

TEXTURE_EPS = 1e-4
NORM_EPS = 1e-8


@dataclass
class DescriptorMap:
    data: np.ndarray  # (C, h, w), unit-norm or zero per pixel
    stride: int

    @property
    def channels(self) -> int:
        return self.data.shape[0]


@dataclass
class CostVolume:
    scores: np.ndarray  # (D, H, W)
    validity: np.ndarray  # (D, H, W) bool


@dataclass
class DepthMap:
    """ERP-band depth in meters. Non-finite or non-positive entries are invalid."""

    depths: np.ndarray
    confidence: np.ndarray | None = None

    @property
    def valid(self) -> np.ndarray:
        d = self.depths
        return np.isfinite(d) & (d > 0)

    @property
    def shape(self) -> tuple:
        return self.depths.shape


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) rig frame, meters
    gray: np.ndarray | None = None  # (N,) in [0, 1]
    distance: np.ndarray | None = None  # (N,) meters

    def __len__(self):
        return len(self.points)


def downsample(image: np.ndarray, stride: int) -> np.ndarray:
    """Area average over non-overlapping stride x stride cells (trailing remainder dropped)."""
    if stride == 1:
        return image
    h, w = image.shape[0] // stride, image.shape[1] // stride
    cells = image[:h * stride, :w * stride].reshape(h, stride, w, stride)
    return cells.mean(axis=(1, 3))


def extract_descriptors(image: np.ndarray, patch: int = 5, stride: int = 1,
                        eps: float = TEXTURE_EPS) -> DescriptorMap:
    """Zero-mean, unit-norm patch vectors; cosine similarity between them is NCC.

    The image is area-downsampled by ``stride`` first, so descriptor fields stay
    smooth at the sampling rate the mapping tables expect.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidArgumentError("expected a grayscale image")
    if patch < 3 or patch % 2 == 0:
        raise InvalidArgumentError("patch must be odd and >= 3")
    if not np.all(np.isfinite(img)):
        raise InvalidArgumentError("image must be finite")
    small = downsample(img, stride)
    if small.shape[0] < patch or small.shape[1] < patch:
        raise InvalidArgumentError("image smaller than the patch")
    r = patch // 2
    padded = np.pad(small, r, mode="edge")
    win = sliding_window_view(padded, (patch, patch))  # (h, w, p, p)
    vec = win.reshape(small.shape + (patch * patch,))
    vec = vec - vec.mean(axis=-1, keepdims=True)
    var = np.mean(vec * vec, axis=-1)
    norm = np.sqrt(np.sum(vec * vec, axis=-1))
    textured = var >= eps
    out = np.where(textured[..., None], vec / np.where(textured, norm, 1.0)[..., None], 0.0)
    return DescriptorMap(np.ascontiguousarray(np.moveaxis(out, -1, 0), dtype=np.float32), stride)


def compute_cost(sphere_a: FeatureSphere, sphere_b: FeatureSphere, eps: float = NORM_EPS) -> CostVolume:
    """Cosine similarity between two feature spheres at every (depth, row, col)."""
    a, b = sphere_a.data, sphere_b.data
    if a.shape != b.shape:
        raise InvalidArgumentError(f"sphere shapes differ: {a.shape} vs {b.shape}")
    dot = np.einsum("cdhw,cdhw->dhw", a, b, dtype=np.float64)
    na = np.sqrt(np.einsum("cdhw,cdhw->dhw", a, a, dtype=np.float64))
    nb = np.sqrt(np.einsum("cdhw,cdhw->dhw", b, b, dtype=np.float64))
    valid = sphere_a.validity & sphere_b.validity
    ok = valid & (na >= eps) & (nb >= eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(ok, dot / (na * nb), 0.0)
    np.clip(scores, -1.0, 1.0, out=scores)
    return CostVolume(scores, valid)


# ---------------------------------------------------------------------------
# aggregation
#
# Pyramid levels are kept at full resolution (dilated kernels) instead of
# being decimated: decimation by two is not equivariant to odd column shifts.


def _shift_rows(x: np.ndarray, k: int) -> np.ndarray:
    """out[..., h, :] = x[..., clamp(h + k), :]."""
    if k == 0:
        return x
    n = x.shape[-2]
    idx = np.clip(np.arange(n) + k, 0, n - 1)
    return x[..., idx, :]


def _dilated_box(x: np.ndarray, radius: int, step: int) -> np.ndarray:
    horiz = x.copy()
    for k in range(1, radius + 1):
        horiz += np.roll(x, k * step, axis=-1)
        horiz += np.roll(x, -k * step, axis=-1)
    out = horiz.copy()
    for k in range(1, radius + 1):
        out += _shift_rows(horiz, k * step)
        out += _shift_rows(horiz, -k * step)
    return out / float((2 * radius + 1) ** 2)


def _binomial(x: np.ndarray, step: int) -> np.ndarray:
    horiz = 0.5 * x + 0.25 * (np.roll(x, step, axis=-1) + np.roll(x, -step, axis=-1))
    return 0.5 * horiz + 0.25 * (_shift_rows(horiz, step) + _shift_rows(horiz, -step))


def aggregate_stages(vol: CostVolume, levels: int = 3, radius: int = 2) -> list[CostVolume]:
    """Refined volumes after each stage; stage s averages pyramid levels 0..s.

    Each level is a wrap-around (azimuth) / clamped (rows) box filter of the
    level's smoothed slice, normalized by the filtered validity mask so
    invalid samples do not pull scores toward zero.
    """
    if levels < 1:
        raise InvalidArgumentError("levels must be >= 1")
    weight = vol.validity.astype(np.float64)
    num = vol.scores.astype(np.float64) * weight
    stages = []
    acc = np.zeros_like(num)
    for level in range(levels):
        step = 2 ** level
        if level > 0:
            num = _binomial(num, step // 2)
            weight = _binomial(weight, step // 2)
        n = _dilated_box(num, radius, step)
        w = _dilated_box(weight, radius, step)
        with np.errstate(invalid="ignore", divide="ignore"):
            acc = acc + np.where(w > 1e-12, n / w, 0.0)
        refined = np.where(vol.validity, acc / (level + 1), 0.0)
        np.clip(refined, -1.0, 1.0, out=refined)
        stages.append(CostVolume(refined, vol.validity))
    return stages


def aggregate_cost(vol: CostVolume, levels: int = 3, radius: int = 2) -> CostVolume:
    return aggregate_stages(vol, levels, radius)[-1]


# ---------------------------------------------------------------------------
# readout


def read_depth(vol: CostVolume, hyp: DepthHypotheses, mode: str = "soft", beta: float = 20.0,
               crop=None) -> DepthMap:
    """Depth per pixel from a cost volume.

    ``wta`` picks the best hypothesis (ties go to the nearer depth). ``soft``
    takes the softmax-weighted mean of inverse depths over valid hypotheses.
    Pixels with no valid hypothesis get NaN and zero confidence.
    """
    if mode not in ("soft", "wta"):
        raise InvalidArgumentError(f"unknown readout mode {mode!r}")
    if not beta > 0:
        raise InvalidArgumentError("beta must be positive")
    scores, valid = vol.scores, vol.validity
    if crop is not None:
        scores = scores[:, crop[0]:crop[1]]
        valid = valid[:, crop[0]:crop[1]]
    if scores.shape[0] != len(hyp):
        raise InvalidArgumentError("cost volume depth does not match the hypotheses")
    any_valid = valid.any(axis=0)
    s = np.where(valid, scores.astype(np.float64), -np.inf)
    best = np.argmax(s, axis=0)
    top = np.take_along_axis(s, best[None], axis=0)[0]
    with np.errstate(invalid="ignore", over="ignore"):
        weights = np.exp(beta * (s - np.where(any_valid, top, 0.0)[None]))
    weights /= np.where(any_valid, weights.sum(axis=0), 1.0)[None]
    confidence = np.where(any_valid, weights.max(axis=0), 0.0)

    depths = np.asarray(hyp.depths)
    if mode == "wta":
        out = depths[best]
    else:
        inv = np.tensordot(hyp.inverse, weights, axes=(0, 0))
        with np.errstate(divide="ignore"):
            out = 1.0 / inv
        # exactly one-hot weights read the hypothesis itself, free of 1/(1/x) rounding
        out = np.where(confidence == 1.0, depths[best], out)
        np.clip(out, hyp.min_depth, hyp.max_depth, out=out)
    out = np.where(any_valid, out, np.nan)
    return DepthMap(out, confidence)


def depth_to_pointcloud(depth: DepthMap, grid: SphereGrid, intensities=None) -> PointCloud:
    if depth.shape != grid.shape:
        raise InvalidArgumentError(f"depth map {depth.shape} does not match grid {grid.shape}")
    valid = depth.valid
    d = depth.depths[valid]
    pts = grid.directions[valid] * d[:, None]
    gray = None
    if intensities is not None:
        intensities = np.asarray(intensities)
        if intensities.shape != grid.shape:
            raise InvalidArgumentError("intensity map does not match grid")
        gray = intensities[valid].astype(np.float64)
    return PointCloud(pts, gray, d.copy())


def distance_colormap(distance: np.ndarray, max_distance: float = 10.0) -> np.ndarray:
    """Near-red to far-blue pseudo-color, uint8 (N, 3)."""
    t = np.clip(np.asarray(distance) / max_distance, 0.0, 1.0)
    rgb = np.stack([1.0 - t, 1.0 - np.abs(2 * t - 1.0), t], axis=-1)
    return (255 * rgb).round().astype(np.uint8)


# ---------------------------------------------------------------------------
# augmentation


def affine_warp(image: np.ndarray, shift=(0.0, 0.0), rotation_deg: float = 0.0,
                scale: float = 1.0) -> np.ndarray:
    """Resample ``image`` under a similarity about its center (bilinear, edge clamp).

    ``shift`` is (columns, rows): content moves right/down for positive values.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    a = np.deg2rad(rotation_deg)
    fwd = scale * np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    inv = np.linalg.inv(fwd)
    t = np.array([shift[1], shift[0]], dtype=np.float64)
    offset = center - inv @ (center + t)
    return ndimage.affine_transform(img, inv, offset=offset, order=1, mode="nearest")


def optical_axis_shift(image: np.ndarray, max_shift: float, seed: int,
                       max_rotation_deg: float = 0.5, max_scale: float = 0.01) -> np.ndarray:
    """Seeded small random affine perturbation mimicking calibration drift."""
    if max_shift < 0:
        raise InvalidArgumentError("max_shift must be >= 0")
    rng = np.random.default_rng(seed)
    shift = rng.uniform(-1.0, 1.0, 2) * max_shift
    rot = rng.uniform(-1.0, 1.0) * max_rotation_deg
    scale = 1.0 + rng.uniform(-1.0, 1.0) * max_scale
    return affine_warp(image, tuple(shift), rot, scale)


def add_noise(image: np.ndarray, sigma: float, seed: int, kind: str = "gaussian") -> np.ndarray:
    rng = np.random.default_rng(seed)
    img = np.asarray(image, dtype=np.float64)
    if kind == "gaussian":
        return img + rng.normal(0.0, sigma, img.shape)
    if kind == "poisson":
        peak = 1.0 / max(sigma, 1e-6) ** 2
        return rng.poisson(np.clip(img, 0, None) * peak) / peak
    raise InvalidArgumentError(f"unknown noise kind {kind!r}")
