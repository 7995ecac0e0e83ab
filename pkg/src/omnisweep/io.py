"""File formats: PFM and 16-bit PNG depth, PLY point clouds, images, run manifests.

PFM files are little-endian float32 with a negative scale header, rows
stored bottom-up; non-finite values are written as-is. 16-bit PNG depth is
in millimeters, 0 meaning invalid and 65535 meaning saturated (>= 65.535 m).
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .errors import ConfigError, InvalidArgumentError
from .matching import PointCloud, distance_colormap

MANIFEST_NAME = "manifest.json"
DISPARITY_MANIFEST = "disparity.json"
DISPARITY_FORMAT = "omnisweep-disparity"
LUMA = (0.299, 0.587, 0.114)


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, data: np.ndarray) -> None:
    a = np.asarray(data, dtype="<f4")
    if a.ndim != 2:
        raise InvalidArgumentError("PFM writer expects a 2D array")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise InvalidArgumentError(f"{path}: not a PFM file")
        channels = 3 if header == b"PF" else 1
        dims = f.readline().split()
        scale = float(f.readline())
        w, h = int(dims[0]), int(dims[1])
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


# ---------------------------------------------------------------------------
# PNG


def depth_to_png16(depth: np.ndarray) -> np.ndarray:
    d = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(d) & (d > 0)
    mm = np.where(valid, np.round(np.where(valid, d, 0.0) * 1000.0), 0.0)
    return np.clip(mm, 0, 65535).astype(np.uint16)


def write_depth_png(path, depth: np.ndarray) -> None:
    Image.fromarray(depth_to_png16(depth)).save(path)


def read_depth_png(path) -> np.ndarray:
    """Depth in meters; invalid pixels are NaN."""
    mm = np.asarray(Image.open(path)).astype(np.float64)
    return np.where(mm > 0, mm / 1000.0, np.nan)


def write_image(path, image: np.ndarray) -> None:
    """Grayscale float image in [0, 1] as 8-bit PNG."""
    a = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(path)


def read_image(path) -> np.ndarray:
    """8-bit grayscale or RGB(A) image as float grayscale in [0, 1]."""
    img = Image.open(path)
    a = np.asarray(img)
    if img.mode in ("I;16", "I;16B", "I"):
        return a.astype(np.float64) / 65535.0
    a = a.astype(np.float64) / 255.0
    if a.ndim == 3:
        a = a[..., :3] @ np.array(LUMA)
    return a


# ---------------------------------------------------------------------------
# PLY


def write_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    n = len(cloud)
    gray = cloud.gray if cloud.gray is not None else np.zeros(n)
    dist = cloud.distance if cloud.distance is not None else np.linalg.norm(cloud.points, axis=1)
    rgb = distance_colormap(dist)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (f"ply\nformat {fmt} 1.0\ncomment omnisweep {__version__}\nelement vertex {n}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property float gray\nproperty float distance\n"
              "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
    dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("gray", "<f4"), ("distance", "<f4"),
                      ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec = np.empty(n, dtype=dtype)
    rec["x"], rec["y"], rec["z"] = cloud.points.T
    rec["gray"], rec["distance"] = gray, dist
    rec["red"], rec["green"], rec["blue"] = rgb.T
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(rec.tobytes())
        else:
            for r in rec:
                f.write((f"{r['x']:.6g} {r['y']:.6g} {r['z']:.6g} {r['gray']:.6g} {r['distance']:.6g} "
                         f"{r['red']} {r['green']} {r['blue']}\n").encode("ascii"))


def read_ply(path) -> PointCloud:
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii")
    n = int(re.search(r"element vertex (\d+)", header).group(1))
    names = re.findall(r"property (\w+) (\w+)", header)
    np_types = {"float": "<f4", "uchar": "u1", "double": "<f8", "int": "<i4"}
    dtype = np.dtype([(name, np_types[t]) for t, name in names])
    if "binary_little_endian" in header:
        rec = np.frombuffer(raw[end:], dtype=dtype, count=n)
    else:
        rows = np.loadtxt(raw[end:].decode("ascii").splitlines(), ndmin=2)
        rec = np.empty(n, dtype=dtype)
        for i, name in enumerate(dtype.names):
            rec[name] = rows[:, i]
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    return PointCloud(pts, rec["gray"].astype(np.float64), rec["distance"].astype(np.float64))


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    version: str = __version__
    started: str = ""
    finished: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def write_manifest(out_dir, manifest: RunManifest) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(manifest.to_json() + "\n")
    return path


def read_manifest(path) -> RunManifest:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    data = json.loads(p.read_text())
    return RunManifest(**data)


# ---------------------------------------------------------------------------
# externally computed disparities


def save_disparities(out_dir, pairs, disparities, rig_hash: str) -> Path:
    """One PFM per pair plus a manifest naming pair yaw and the rig hash."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for pair, disp in zip(pairs, disparities):
        name = f"pair_{pair.cameras[0]}_{pair.cameras[1]}.pfm"
        write_pfm(out / name, disp)
        entries.append({"left": pair.cameras[0], "right": pair.cameras[1],
                        "pair_yaw": round(float(pair.pair_yaw), 6), "file": name})
    path = out / DISPARITY_MANIFEST
    path.write_text(json.dumps({"format": DISPARITY_FORMAT, "version": 1, "rig_hash": rig_hash,
                                "pairs": entries}, indent=2) + "\n")
    return path


def load_disparities(in_dir, rig_hash: str) -> dict:
    """Map ``(left, right)`` -> disparity array; rejects files made for another rig."""
    src = Path(in_dir)
    try:
        meta = json.loads((src / DISPARITY_MANIFEST).read_text())
    except FileNotFoundError:
        raise ConfigError("import-disparity", f"{src / DISPARITY_MANIFEST} not found") from None
    if meta.get("format") != DISPARITY_FORMAT:
        raise ConfigError("format", f"expected {DISPARITY_FORMAT!r}")
    if meta.get("rig_hash") != rig_hash:
        raise ConfigError("rig_hash", "disparities were computed for a different rig calibration")
    out = {}
    for i, e in enumerate(meta.get("pairs", [])):
        try:
            out[(int(e["left"]), int(e["right"]))] = read_pfm(src / e["file"]).astype(np.float64)
        except KeyError as exc:
            raise ConfigError(f"pairs[{i}].{exc.args[0]}", "missing field") from None
    return out
