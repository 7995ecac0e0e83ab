import json

import numpy as np
import pytest

from omnisweep.errors import ConfigError, InvalidArgumentError
from omnisweep.io import (RunManifest, depth_to_png16, load_disparities, read_depth_png, read_image,
                          read_manifest, read_pfm, read_ply, save_disparities, write_depth_png,
                          write_image, write_manifest, write_pfm, write_ply)
from omnisweep.matching import PointCloud


def test_pfm_round_trip(tmp_path, rng):
    a = rng.random((7, 11)).astype(np.float32)
    a[2, 3] = np.nan
    write_pfm(tmp_path / "a.pfm", a)
    b = read_pfm(tmp_path / "a.pfm")
    np.testing.assert_array_equal(a, b)


def test_pfm_layout(tmp_path):
    a = np.array([[1, 2], [3, 4]], dtype=np.float32)
    write_pfm(tmp_path / "a.pfm", a)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    # bottom row first, little-endian
    np.testing.assert_array_equal(np.frombuffer(raw[-16:], "<f4"), [3, 4, 1, 2])


def test_pfm_rejects_other_files(tmp_path):
    (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(InvalidArgumentError):
        read_pfm(tmp_path / "x.pfm")
    with pytest.raises(InvalidArgumentError):
        write_pfm(tmp_path / "y.pfm", np.zeros(3))


def test_png16_millimeters(tmp_path):
    d = np.array([[1.2344, np.nan], [0.0, 70.0]])
    np.testing.assert_array_equal(depth_to_png16(d), [[1234, 0], [0, 65535]])
    write_depth_png(tmp_path / "d.png", d)
    back = read_depth_png(tmp_path / "d.png")
    assert back[0, 0] == pytest.approx(1.234)
    assert np.isnan(back[0, 1]) and np.isnan(back[1, 0])
    assert back[1, 1] == pytest.approx(65.535)


def test_image_round_trip(tmp_path, rng):
    img = rng.random((5, 9))
    write_image(tmp_path / "i.png", img)
    np.testing.assert_allclose(read_image(tmp_path / "i.png"), img, atol=0.5 / 255 + 1e-12)


def test_rgb_luma(tmp_path):
    from PIL import Image
    rgb = np.zeros((2, 2, 3), np.uint8)
    rgb[..., 0] = 255
    Image.fromarray(rgb).save(tmp_path / "c.png")
    np.testing.assert_allclose(read_image(tmp_path / "c.png"), 0.299)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip(tmp_path, rng, binary):
    pts = rng.normal(size=(20, 3))
    cloud = PointCloud(pts, rng.random(20), np.linalg.norm(pts, axis=1))
    write_ply(tmp_path / "c.ply", cloud, binary=binary)
    back = read_ply(tmp_path / "c.ply")
    np.testing.assert_allclose(back.points, pts, rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(back.distance, cloud.distance, rtol=1e-5)
    header = (tmp_path / "c.ply").read_bytes().split(b"end_header")[0].decode()
    for prop in ("x", "y", "z", "gray", "distance"):
        assert f"property float {prop}\n" in header


def test_manifest_round_trip(tmp_path):
    m = RunManifest("estimate", {"rig_hash": "abc", "grid": [960, 480]}, {"in": "x"}, {"depth": "d.pfm"})
    write_manifest(tmp_path, m)
    assert read_manifest(tmp_path) == m
    assert json.loads((tmp_path / "manifest.json").read_text())["command"] == "estimate"


def test_disparity_import_checks_hash(tmp_path, rng):
    class P:
        cameras = (2, 3)
        pair_yaw = 150.0
    d = rng.random((4, 6)).astype(np.float32)
    save_disparities(tmp_path, [P()], [d], "hash1")
    got = load_disparities(tmp_path, "hash1")
    np.testing.assert_array_equal(got[(2, 3)], d)
    with pytest.raises(ConfigError):
        load_disparities(tmp_path, "hash2")
    with pytest.raises(ConfigError):
        load_disparities(tmp_path / "missing", "hash1")
