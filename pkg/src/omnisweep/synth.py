"""Analytic scene renderer used as ground truth for every pipeline stage.

Scenes are built from spheres, planes (optionally finite rectangles) and
yawed boxes. Surfaces carry solid 3D textures, so every camera sees the
same pattern at a given surface point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import _kernels
from .errors import ConfigError, InvalidArgumentError
from .geometry import FisheyeCamera, unproject
from .matching import DepthMap
from .sweep import SphereGrid

BACKGROUND = 0.5
SCENE_FORMAT = "omnisweep-scene"
RAY_EPS = 1e-9


@dataclass(frozen=True)
class Texture:
    kind: str = "noise"  # "noise" or "checker"
    scale: float = 0.1  # noise cell / checker square size in meters
    seed: int = 0
    contrast: float = 0.8

    def __post_init__(self):
        if self.kind not in ("noise", "checker"):
            raise InvalidArgumentError(f"unknown texture kind {self.kind!r}")
        if not self.scale > 0:
            raise InvalidArgumentError("texture scale must be positive")

    def shade(self, p: np.ndarray) -> np.ndarray:
        if self.kind == "checker":
            q = np.floor(p / self.scale).astype(np.int64).sum(axis=-1)
            v = (q & 1).astype(np.float64)
        else:
            v = _value_noise(p / self.scale, self.seed)
        return 0.5 + self.contrast * (v - 0.5)


def _value_noise(p: np.ndarray, seed: int, octaves: int = 3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(256).astype(np.int64)
    values = rng.random(256)
    flat = np.ascontiguousarray(p.reshape(-1, 3), dtype=np.float64)
    v = np.empty(len(flat))
    _kernels.value_noise(flat, perm, values, octaves, v)
    # stretch the narrow distribution of averaged noise toward [0, 1]
    return np.clip(0.5 + 2.2 * (v.reshape(p.shape[:-1]) - 0.5), 0.0, 1.0)


def _as3(v, name):
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} must be 3 finite numbers")
    return a


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        _as3(self.center, "center")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InvalidArgumentError("sphere radius must be positive")

    def intersect(self, o, d):
        oc = o - np.asarray(self.center, dtype=np.float64)
        b = np.einsum("...k,...k->...", d, oc)
        c = np.einsum("...k,...k->...", oc, oc) - self.radius ** 2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t1, t2 = -b - root, -b + root
        t = np.where(t1 > RAY_EPS, t1, np.where(t2 > RAY_EPS, t2, np.inf))
        return np.where(disc >= 0, t, np.inf)


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple
    size: tuple | None = None  # (extent along u, extent along v); None for infinite
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        _as3(self.point, "point")
        n = _as3(self.normal, "normal")
        if np.linalg.norm(n) == 0:
            raise InvalidArgumentError("plane normal must be nonzero")
        if self.size is not None and not all(s > 0 for s in self.size):
            raise InvalidArgumentError("plane size must be positive")

    def _basis(self):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        up = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(up, n)
        u /= np.linalg.norm(u)
        return n, u, np.cross(n, u)

    def intersect(self, o, d):
        n, u, v = self._basis()
        p0 = np.asarray(self.point, dtype=np.float64)
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((p0 - o) @ n) / denom
        t = np.where((np.abs(denom) > 1e-12) & (t > RAY_EPS), t, np.inf)
        if self.size is not None:
            hit = o + np.where(np.isfinite(t), t, 0.0)[..., None] * d - p0
            inside = (np.abs(hit @ u) <= self.size[0] / 2) & (np.abs(hit @ v) <= self.size[1] / 2)
            t = np.where(inside, t, np.inf)
        return t


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple  # full extents along the box's local x, y, z
    yaw: float = 0.0  # degrees about rig +z
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        _as3(self.center, "center")
        s = _as3(self.size, "size")
        if np.any(s <= 0):
            raise InvalidArgumentError("box size must be positive")

    def intersect(self, o, d):
        a = math.radians(self.yaw)
        rot = np.array([[math.cos(a), -math.sin(a), 0.0], [math.sin(a), math.cos(a), 0.0], [0, 0, 1.0]])
        lo_ = (o - np.asarray(self.center, dtype=np.float64)) @ rot
        ld = d @ rot
        half = np.asarray(self.size, dtype=np.float64) / 2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / ld
            ta = (-half - lo_) * inv
            tb = (half - lo_) * inv
        # rays parallel to a slab: inside the slab -> unbounded, outside -> miss
        par = ld == 0
        inside = np.abs(lo_) <= half
        tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
        tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
        t_near = tmin.max(axis=-1)
        t_far = tmax.min(axis=-1)
        hit = (t_near <= t_far) & (t_far > RAY_EPS)
        t = np.where(t_near > RAY_EPS, t_near, t_far)
        return np.where(hit, t, np.inf)


@dataclass(frozen=True)
class Scene:
    primitives: tuple
    background: float = BACKGROUND
    name: str = "scene"

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if not self.primitives:
            raise InvalidArgumentError("a scene needs at least one primitive")

    def raycast(self, origins: np.ndarray, dirs: np.ndarray):
        """Nearest hit distance and primitive index per ray (inf / -1 on miss)."""
        best = np.full(dirs.shape[:-1], np.inf)
        index = np.full(dirs.shape[:-1], -1, dtype=np.int64)
        for i, prim in enumerate(self.primitives):
            t = prim.intersect(origins, dirs)
            closer = t < best
            best = np.where(closer, t, best)
            index = np.where(closer, i, index)
        return best, index

    def shade(self, origins, dirs) -> tuple[np.ndarray, np.ndarray]:
        t, index = self.raycast(origins, dirs)
        out = np.full(t.shape, float(self.background))
        hit = np.isfinite(t)
        points = origins + np.where(hit, t, 0.0)[..., None] * dirs
        for i, prim in enumerate(self.primitives):
            sel = index == i
            if np.any(sel):
                out[sel] = prim.texture.shade(points[sel])
        return out, t


def render_fisheye(scene: Scene, cam: FisheyeCamera, supersample: int = 1, seed: int = 0,
                   chunk_rows: int = 64) -> np.ndarray:
    """Grayscale image in [0, 1], averaged over supersample x supersample strata.

    Each pixel draws its own jitter inside every stratum, so the sampling
    pattern carries no image-wide subpixel offset. Output is a pure function
    of the seed.
    """
    if supersample < 1:
        raise InvalidArgumentError("supersample must be >= 1")
    rng = np.random.default_rng(seed)
    ss = supersample
    rot = cam.pose.rotation
    origin = cam.pose.translation
    image = np.zeros((cam.height, cam.width))
    cols = np.arange(cam.width, dtype=np.float64)
    for r0 in range(0, cam.height, chunk_rows):
        rows = np.arange(r0, min(r0 + chunk_rows, cam.height), dtype=np.float64)
        acc = np.zeros((len(rows), cam.width))
        for sy in range(ss):
            for sx in range(ss):
                if ss == 1:
                    jx = jy = 0.0
                else:
                    jit = rng.random((2, len(rows), cam.width))
                    jx = (sx + jit[0]) / ss - 0.5
                    jy = (sy + jit[1]) / ss - 0.5
                u = np.clip(cols[None, :] + jx, 0.0, cam.width - 1e-9)
                v = np.clip(rows[:, None] + jy, 0.0, cam.height - 1e-9)
                pix = np.stack(np.broadcast_arrays(u, v), axis=-1)
                rays = unproject(cam, pix) @ rot.T
                shade, _ = scene.shade(origin, rays)
                acc += shade
        image[r0:r0 + len(rows)] = acc / (ss * ss)
    return image


def render_rig(scene: Scene, rig, supersample: int = 1, seed: int = 0) -> list[np.ndarray]:
    return [render_fisheye(scene, cam, supersample, seed + i) for i, cam in enumerate(rig.cameras)]


def render_groundtruth_erp(scene: Scene, grid: SphereGrid, crop=None) -> DepthMap:
    """Exact distance from the rig origin along each grid direction (inf on miss)."""
    dirs = grid.directions
    if crop is not None:
        dirs = dirs[crop[0]:crop[1]]
    t, _ = scene.raycast(np.zeros(3), dirs)
    return DepthMap(t)


def render_erp_intensity(scene: Scene, grid: SphereGrid) -> np.ndarray:
    shade, _ = scene.shade(np.zeros(3), grid.directions)
    return shade


# ---------------------------------------------------------------------------
# scene files


def _texture_from(d, path) -> Texture:
    if d is None:
        return Texture()
    if not isinstance(d, dict):
        raise ConfigError(path, "texture must be a mapping")
    try:
        return Texture(str(d.get("kind", "noise")), float(d.get("scale", 0.1)),
                       int(d.get("seed", 0)), float(d.get("contrast", 0.8)))
    except (InvalidArgumentError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def scene_from_dict(data: dict) -> Scene:
    if not isinstance(data, dict) or not isinstance(data.get("primitives"), list):
        raise ConfigError("primitives", "scene needs a list of primitives")
    prims = []
    for i, p in enumerate(data["primitives"]):
        path = f"primitives[{i}]"
        if not isinstance(p, dict):
            raise ConfigError(path, "expected a mapping")
        tex = _texture_from(p.get("texture"), path + ".texture")
        kind = p.get("type")
        try:
            if kind == "sphere":
                prims.append(Sphere(tuple(p["center"]), float(p["radius"]), tex))
            elif kind == "plane":
                size = p.get("size")
                prims.append(Plane(tuple(p["point"]), tuple(p["normal"]),
                                   None if size is None else tuple(float(s) for s in size), tex))
            elif kind == "box":
                prims.append(Box(tuple(p["center"]), tuple(p["size"]), float(p.get("yaw", 0.0)), tex))
            else:
                raise ConfigError(path + ".type", f"unknown primitive type {kind!r}")
        except KeyError as exc:
            raise ConfigError(f"{path}.{exc.args[0]}", "missing field") from None
        except (InvalidArgumentError, TypeError, ValueError) as exc:
            raise ConfigError(path, str(exc)) from None
    return Scene(tuple(prims), float(data.get("background", BACKGROUND)), str(data.get("name", "scene")))


def scene_to_dict(scene: Scene) -> dict:
    prims = []
    for p in scene.primitives:
        tex = {"kind": p.texture.kind, "scale": p.texture.scale, "seed": p.texture.seed,
               "contrast": p.texture.contrast}
        if isinstance(p, Sphere):
            prims.append({"type": "sphere", "center": list(p.center), "radius": p.radius, "texture": tex})
        elif isinstance(p, Plane):
            item = {"type": "plane", "point": list(p.point), "normal": list(p.normal), "texture": tex}
            if p.size is not None:
                item["size"] = list(p.size)
            prims.append(item)
        else:
            prims.append({"type": "box", "center": list(p.center), "size": list(p.size),
                          "yaw": p.yaw, "texture": tex})
    return {"format": SCENE_FORMAT, "version": 1, "name": scene.name,
            "background": scene.background, "primitives": prims}


def load_scene(path) -> Scene:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return scene_from_dict(data)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(yaml.safe_dump(scene_to_dict(scene), sort_keys=False))
