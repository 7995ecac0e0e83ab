"""Camera models, rigid poses and the six-camera rig configuration.

Conventions
-----------
Rig frame: +x forward (azimuth 0), +y left (azimuth +90 deg), +z up.
Camera frame (OpenCV): +x right, +y down, +z along the optical axis.
Image frame: pixel centers at integer coordinates, u to the right, v down.

Poses map camera coordinates into the rig frame: ``X_rig = R @ X_cam + t``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from . import _kernels
from .errors import ConfigError, InvalidArgumentError

ORTHO_TOL = 1e-9
GROUPS = ((0, 2, 4), (1, 3, 5))
RIG_FORMAT = "omnisweep-rig"
RIG_VERSION = 1

# camera axes expressed in the rig frame for a camera looking along rig +x
_BASE = np.array([[0.0, 0.0, 1.0],
                  [-1.0, 0.0, 0.0],
                  [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class RigidPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise InvalidArgumentError("pose contains non-finite values")
        if np.abs(rot.T @ rot - np.eye(3)).max() > ORTHO_TOL:
            raise InvalidArgumentError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise InvalidArgumentError("rotation determinant is not +1")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> RigidPose:
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation

    def allclose(self, other: RigidPose, atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))


def compose_pose(a: RigidPose, b: RigidPose) -> RigidPose:
    """Pose that applies ``b`` first, then ``a``."""
    rot = a.rotation @ b.rotation
    # re-orthonormalize so long chains stay within tolerance
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    return RigidPose(rot, a.rotation @ b.translation + a.translation)


def invert_pose(p: RigidPose) -> RigidPose:
    rt = p.rotation.T
    return RigidPose(rt, -rt @ p.translation)


def yaw_pitch_roll_pose(yaw: float, pitch: float = 0.0, roll: float = 0.0,
                        translation=(0.0, 0.0, 0.0)) -> RigidPose:
    """Camera-to-rig pose from rig-frame Euler angles in degrees.

    Yaw turns the optical axis counter-clockwise seen from above; zero angles
    give a level camera looking along rig +x.
    """
    rot = Rotation.from_euler("ZYX", [yaw, pitch, roll], degrees=True).as_matrix() @ _BASE
    return RigidPose(rot, translation)


def pose_angles(p: RigidPose) -> tuple[float, float, float]:
    yaw, pitch, roll = Rotation.from_matrix(p.rotation @ _BASE.T).as_euler("ZYX", degrees=True)
    return float(yaw), float(pitch), float(roll)


@dataclass(frozen=True)
class FisheyeCamera:
    """Equidistant fisheye with a four-term odd radial polynomial.

    ``r(theta) = fx * theta * (1 + k1 theta^2 + k2 theta^4 + k3 theta^6 + k4 theta^8)``.
    The valid region is the elliptical cone
    ``(theta cos(phi) / (hfov/2))^2 + (theta sin(phi) / (vfov/2))^2 <= 1``.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    hfov: float = 161.0
    vfov: float = 75.0
    pose: RigidPose = field(default_factory=RigidPose.identity)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError("camera width and height must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal scales must be positive")
        for name in ("hfov", "vfov"):
            value = getattr(self, name)
            if not 0 < value <= 180:
                raise InvalidArgumentError(f"{name} must be in (0, 180], got {value}")
        coeffs = (self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.k4)
        if not all(math.isfinite(c) for c in coeffs):
            raise InvalidArgumentError("camera parameters must be finite")
        object.__setattr__(self, "_theta_max", self._monotone_limit())
        if self._theta_max < math.radians(max(self.hfov, self.vfov)) / 2:
            raise InvalidArgumentError(
                "radial polynomial is not monotone over the field of view")

    def _monotone_limit(self) -> float:
        theta = np.linspace(0.0, math.pi, 20001)
        t2 = theta * theta
        slope = 1 + 3 * self.k1 * t2 + 5 * self.k2 * t2**2 + 7 * self.k3 * t2**3 + 9 * self.k4 * t2**4
        bad = np.nonzero(slope <= 0)[0]
        if len(bad) == 0:
            return math.pi
        return float(theta[max(bad[0] - 1, 0)])

    @property
    def theta_max(self) -> float:
        return self._theta_max

    @property
    def optical_axis(self) -> np.ndarray:
        """Optical axis direction in the rig frame."""
        return self.pose.rotation[:, 2].copy()

    def intrinsics_vector(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.k4,
                         math.radians(self.hfov) / 2, math.radians(self.vfov) / 2,
                         float(self.width), float(self.height), self._theta_max])

    def radial(self, theta):
        t2 = np.asarray(theta) ** 2
        return self.fx * theta * (1 + t2 * (self.k1 + t2 * (self.k2 + t2 * (self.k3 + t2 * self.k4))))

    def with_pose(self, pose: RigidPose) -> FisheyeCamera:
        return FisheyeCamera(self.width, self.height, self.fx, self.fy, self.cx, self.cy,
                             self.k1, self.k2, self.k3, self.k4, self.hfov, self.vfov, pose)


def project(cam: FisheyeCamera, point) -> tuple[np.ndarray, np.ndarray]:
    """Project camera-frame points (..., 3) to pixels (..., 2) and a validity mask."""
    pts = np.asarray(point, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise InvalidArgumentError("points must have a trailing dimension of 3")
    flat = np.ascontiguousarray(pts.reshape(-1, 3))
    if not np.all(np.isfinite(flat)):
        raise InvalidArgumentError("points must be finite")
    if np.any(np.all(flat == 0.0, axis=1)):
        raise InvalidArgumentError("cannot project the zero vector")
    uv = np.empty((len(flat), 2))
    ok = np.empty(len(flat), dtype=np.bool_)
    _kernels.project_points(flat, cam.intrinsics_vector(), uv, ok)
    return uv.reshape(pts.shape[:-1] + (2,)), ok.reshape(pts.shape[:-1])


def _solve_theta(cam: FisheyeCamera, target: np.ndarray) -> np.ndarray:
    # bracketed Newton: fall back to bisection whenever a step leaves the bracket
    lo = np.zeros_like(target)
    hi = np.full_like(target, cam.theta_max)
    theta = np.clip(target, 0.0, cam.theta_max)
    k1, k2, k3, k4 = cam.k1, cam.k2, cam.k3, cam.k4
    for _ in range(100):
        t2 = theta * theta
        g = theta * (1 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4)))) - target
        dg = 1 + t2 * (3 * k1 + t2 * (5 * k2 + t2 * (7 * k3 + t2 * 9 * k4)))
        lo = np.where(g < 0, theta, lo)
        hi = np.where(g > 0, theta, hi)
        step = theta - g / dg
        inside = (step >= lo) & (step <= hi)
        new = np.where(g == 0, theta, np.where(inside, step, 0.5 * (lo + hi)))
        done = np.abs(new - theta) < 1e-12
        theta = new
        if np.all(done):
            break
    return theta


def unproject(cam: FisheyeCamera, pixel, check_bounds: bool = True) -> np.ndarray:
    """Unit camera-frame rays (..., 3) for pixel coordinates (..., 2)."""
    px = np.asarray(pixel, dtype=np.float64)
    if px.shape[-1] != 2:
        raise InvalidArgumentError("pixels must have a trailing dimension of 2")
    u, v = px[..., 0], px[..., 1]
    if check_bounds and not np.all((u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)):
        raise InvalidArgumentError("pixel outside the image")
    mx = u - cam.cx
    my = (v - cam.cy) * (cam.fx / cam.fy)
    r = np.hypot(mx, my)
    theta = _solve_theta(cam, r / cam.fx)
    safe = np.where(r > 0, r, 1.0)
    cphi = np.where(r > 0, mx / safe, 1.0)
    sphi = np.where(r > 0, my / safe, 0.0)
    s = np.sin(theta)
    return np.stack([s * cphi, s * sphi, np.cos(theta)], axis=-1)


def angle_between(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.arctan2(cross, np.sum(a * b, axis=-1))


@dataclass(frozen=True)
class RigConfig:
    cameras: tuple
    groups: tuple = GROUPS
    min_depth: float = 0.5
    max_depth: float = 100.0
    num_hypotheses: int = 64
    sphere_width: int = 960
    sphere_height: int = 480
    crop_rows: tuple = (144, 336)

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "groups", tuple(tuple(int(i) for i in g) for g in self.groups))
        object.__setattr__(self, "crop_rows", tuple(int(r) for r in self.crop_rows))
        if len(self.cameras) != 6:
            raise ConfigError("cameras", f"expected exactly 6 cameras, got {len(self.cameras)}")
        if tuple(sorted(tuple(sorted(g)) for g in self.groups)) != GROUPS:
            raise ConfigError("groups", "groups must partition the cameras into {0,2,4} and {1,3,5}")
        if not 0 < self.min_depth < self.max_depth:
            raise ConfigError("min_depth", "require 0 < min_depth < max_depth")
        if self.num_hypotheses < 2:
            raise ConfigError("num_hypotheses", "need at least 2 hypotheses")
        if self.sphere_width < 4 or self.sphere_height < 2:
            raise ConfigError("sphere_width", "sphere grid too small")
        first, last = self.crop_rows
        if not 0 <= first < last <= self.sphere_height:
            raise ConfigError("crop_rows", "require 0 <= first < last <= sphere_height")

    def group_of(self, cam_index: int) -> int:
        return 0 if cam_index in self.groups[0] else 1

    def to_dict(self) -> dict:
        cams = []
        for cam in self.cameras:
            yaw, pitch, roll = pose_angles(cam.pose)
            cams.append({
                "width": cam.width, "height": cam.height,
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "k": [cam.k1, cam.k2, cam.k3, cam.k4],
                "hfov": cam.hfov, "vfov": cam.vfov,
                "pose": {"yaw": yaw, "pitch": pitch, "roll": roll,
                         "translation": [float(x) for x in cam.pose.translation]},
            })
        return {
            "format": RIG_FORMAT, "version": RIG_VERSION,
            "min_depth": self.min_depth, "max_depth": self.max_depth,
            "num_hypotheses": self.num_hypotheses,
            "sphere_width": self.sphere_width, "sphere_height": self.sphere_height,
            "crop_rows": list(self.crop_rows),
            "groups": [list(g) for g in self.groups],
            "cameras": cams,
        }

    def fingerprint(self) -> str:
        """Stable hash of every numeric field (rotations hashed as matrices)."""
        payload = {k: v for k, v in self.to_dict().items() if k != "cameras"}
        payload["cameras"] = [
            [c.width, c.height, c.fx, c.fy, c.cx, c.cy, c.k1, c.k2, c.k3, c.k4, c.hfov, c.vfov,
             [round(float(x), 12) for x in c.pose.rotation.ravel()],
             [round(float(x), 12) for x in c.pose.translation]]
            for c in self.cameras]
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def default_camera(width: int = 960, height: int = 540, hfov: float = 161.0,
                   vfov: float = 75.0) -> FisheyeCamera:
    """Distortion-free camera whose horizontal half-FoV lands on the last pixel column."""
    cx = width / 2.0
    cy = height / 2.0
    fx = (width - 1 - cx) / math.radians(hfov / 2)
    return FisheyeCamera(width, height, fx, fx, cx, cy, hfov=hfov, vfov=vfov)


def default_hexagon_rig(radius: float = 0.17, yaw_step: float = 60.0, width: int = 960,
                        height: int = 540, **config) -> RigConfig:
    """Six level cameras on a regular hexagon, camera i yawed ``i * yaw_step`` outward.

    For a regular hexagon the side equals the circumradius, so ``radius`` is
    also the distance between adjacent optical centers.
    """
    if not radius > 0:
        raise InvalidArgumentError("radius must be positive")
    base = default_camera(width, height)
    cams = []
    for i in range(6):
        yaw = i * yaw_step
        a = math.radians(yaw)
        pose = yaw_pitch_roll_pose(yaw, translation=(radius * math.cos(a), radius * math.sin(a), 0.0))
        cams.append(base.with_pose(pose))
    return RigConfig(tuple(cams), **config)


def perturbed_rig(rig: RigConfig, rng: np.random.Generator, angle_deg: float = 2.0,
                  offset_m: float = 0.01) -> RigConfig:
    """Rig with small random extrinsic errors, like a real calibration."""
    cams = []
    for cam in rig.cameras:
        yaw, pitch, roll = pose_angles(cam.pose)
        d = rng.uniform(-angle_deg, angle_deg, 3)
        t = cam.pose.translation + rng.uniform(-offset_m, offset_m, 3)
        cams.append(cam.with_pose(yaw_pitch_roll_pose(yaw + d[0], pitch + d[1], roll + d[2], t)))
    return RigConfig(tuple(cams), rig.groups, rig.min_depth, rig.max_depth, rig.num_hypotheses,
                     rig.sphere_width, rig.sphere_height, rig.crop_rows)


# ---------------------------------------------------------------------------
# rig files


def _field(d: dict, key: str, path: str, kind=float):
    if key not in d:
        raise ConfigError(f"{path}{key}", "missing field")
    value = d[key]
    try:
        if kind is int:
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        out = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}{key}", f"expected {kind.__name__}, got {value!r}") from None
    if kind is float and not math.isfinite(out):
        raise ConfigError(f"{path}{key}", "must be finite")
    return out


def _vector(d: dict, key: str, path: str, n: int) -> list:
    value = d.get(key)
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(f"{path}{key}", f"expected a list of {n} numbers")
    try:
        return [float(x) for x in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{path}{key}", "expected numbers") from None


def rig_from_dict(data: dict) -> RigConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "rig file must contain a mapping")
    if data.get("format", RIG_FORMAT) != RIG_FORMAT:
        raise ConfigError("format", f"expected {RIG_FORMAT!r}")
    if data.get("version", RIG_VERSION) != RIG_VERSION:
        raise ConfigError("version", f"unsupported version {data.get('version')!r}")
    raw_cams = data.get("cameras")
    if not isinstance(raw_cams, list):
        raise ConfigError("cameras", "expected a list of camera blocks")
    cams = []
    for i, c in enumerate(raw_cams):
        path = f"cameras[{i}]."
        if not isinstance(c, dict):
            raise ConfigError(path[:-1], "expected a mapping")
        k = _vector(c, "k", path, 4) if "k" in c else [0.0] * 4
        pose = c.get("pose", {})
        if not isinstance(pose, dict):
            raise ConfigError(path + "pose", "expected a mapping")
        ppath = path + "pose."
        try:
            rig_pose = yaw_pitch_roll_pose(
                _field(pose, "yaw", ppath), float(pose.get("pitch", 0.0)),
                float(pose.get("roll", 0.0)), _vector(pose, "translation", ppath, 3))
            cam = FisheyeCamera(
                _field(c, "width", path, int), _field(c, "height", path, int),
                _field(c, "fx", path), _field(c, "fy", path),
                _field(c, "cx", path), _field(c, "cy", path), *k,
                hfov=_field(c, "hfov", path), vfov=_field(c, "vfov", path), pose=rig_pose)
        except InvalidArgumentError as exc:
            raise ConfigError(path[:-1], str(exc)) from None
        cams.append(cam)
    crop = data.get("crop_rows", [144, 336])
    if not isinstance(crop, (list, tuple)) or len(crop) != 2:
        raise ConfigError("crop_rows", "expected [first, last]")
    return RigConfig(
        tuple(cams),
        tuple(tuple(g) for g in data.get("groups", GROUPS)),
        _field(data, "min_depth", ""), _field(data, "max_depth", ""),
        _field(data, "num_hypotheses", "", int),
        _field(data, "sphere_width", "", int), _field(data, "sphere_height", "", int),
        tuple(int(x) for x in crop))


def load_rig(path) -> RigConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return rig_from_dict(data)


def save_rig(rig: RigConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(rig.to_dict(), sort_keys=False))
