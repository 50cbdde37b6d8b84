import numpy as np
import pytest

from polarmesh.camera import Camera, load_cameras, save_cameras
from polarmesh.io import read_pfm, read_ply, write_pfm, write_ply


def test_pfm_roundtrip_gray(tmp_path):
    img = np.random.default_rng(0).random((7, 5)).astype(np.float64)
    p = tmp_path / "g.pfm"
    write_pfm(p, img)
    out = read_pfm(p)
    assert out.shape == img.shape
    assert np.allclose(out, img, atol=1e-7)  # stored as float32


def test_pfm_roundtrip_rgb(tmp_path):
    img = np.random.default_rng(1).random((6, 9, 3))
    p = tmp_path / "c.pfm"
    write_pfm(p, img)
    assert np.allclose(read_pfm(p), img, atol=1e-7)


def test_pfm_deterministic_bytes(tmp_path):
    img = np.random.default_rng(2).random((4, 4))
    write_pfm(tmp_path / "a.pfm", img)
    write_pfm(tmp_path / "b.pfm", img)
    assert (tmp_path / "a.pfm").read_bytes() == (tmp_path / "b.pfm").read_bytes()


def test_ply_roundtrip_binary(tmp_path):
    rng = np.random.default_rng(3)
    v = rng.random((10, 3))
    f = np.array([[0, 1, 2], [2, 3, 4], [4, 5, 6]])
    alb = rng.random((10, 3))
    q = rng.random(10)
    p = tmp_path / "m.ply"
    write_ply(p, v, f, albedo=alb, quality=q)
    vo, fo, ao, qo = read_ply(p)
    assert np.allclose(vo, v, atol=1e-6)
    assert np.array_equal(fo, f)
    assert np.allclose(ao, alb, atol=1e-6)
    assert np.allclose(qo, q, atol=1e-6)


def test_ply_roundtrip_ascii(tmp_path):
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    f = np.array([[0, 1, 2]])
    p = tmp_path / "a.ply"
    write_ply(p, v, f, binary=False)
    vo, fo, ao, qo = read_ply(p)
    assert np.allclose(vo, v)
    assert np.array_equal(fo, f)
    assert ao is None and qo is None


def test_camera_json_roundtrip(tmp_path):
    R = np.eye(3)
    cams = [Camera(fx=100, fy=110, cx=32, cy=31, width=64, height=63,
                   R=R, t=np.array([0.1, -0.2, 3.0]))]
    p = tmp_path / "cams.json"
    save_cameras(p, cams)
    out = load_cameras(p)
    assert len(out) == 1
    c = out[0]
    assert (c.fx, c.fy, c.cx, c.cy, c.width, c.height) == (100, 110, 32, 31, 64, 63)
    assert np.allclose(c.R, R) and np.allclose(c.t, [0.1, -0.2, 3.0])


def test_camera_rejects_non_rotation():
    with pytest.raises(ValueError):
        Camera(fx=1, fy=1, cx=0, cy=0, width=2, height=2,
               R=np.eye(3) * 2.0, t=np.zeros(3))


def test_camera_projection_convention():
    cam = Camera(fx=100, fy=100, cx=32, cy=32, width=64, height=64,
                 R=np.eye(3), t=np.zeros(3))
    px, py, z = cam.project(np.array([0.1, 0.2, 2.0]))
    assert np.isclose(px, 32 + 100 * 0.05)
    assert np.isclose(py, 32 + 100 * 0.10)
    assert np.isclose(z, 2.0)
    # points behind the camera do not project
    px, py, z = cam.project(np.array([0.0, 0.0, -1.0]))
    assert np.isnan(px)
    # back-projection inverts projection
    p = cam.back_project(42.0, 17.0, 2.0)
    qx, qy, qz = cam.project(p)
    assert np.isclose(qx, 42.0) and np.isclose(qy, 17.0) and np.isclose(qz, 2.0)
