"""Pinhole camera model (world-to-camera convention, y-down image coordinates)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CONVENTION = "x_cam = R @ x_world + t; pixel = (fx*x/z + cx, fy*y/z + cy), y down"


class CameraError(ValueError):
    pass


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray  # (3,3) world -> camera rotation
    t: np.ndarray  # (3,) world -> camera translation

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError("focal lengths must be positive")
        err = np.abs(self.R @ self.R.T - np.eye(3)).max()
        if err > 1e-9 or abs(np.linalg.det(self.R) - 1.0) > 1e-9:
            raise CameraError(f"rotation not orthonormal (err={err:.3g})")

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def project(self, point) -> tuple[float, float, float]:
        """Project a world point; returns (px, py, depth). depth <= 0 means behind camera."""
        p = self.R @ np.asarray(point, dtype=np.float64) + self.t
        z = p[2]
        if z <= 0.0:
            return np.nan, np.nan, z
        return self.fx * p[0] / z + self.cx, self.fy * p[1] / z + self.cy, z

    def project_many(self, points: np.ndarray):
        """Vectorized projection. Returns (px, py, z) arrays; px/py are NaN behind camera."""
        p = points @ self.R.T + self.t
        z = p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = np.where(z > 0, self.fx * p[:, 0] / z + self.cx, np.nan)
            py = np.where(z > 0, self.fy * p[:, 1] / z + self.cy, np.nan)
        return px, py, z

    def back_project(self, px: float, py: float, depth: float) -> np.ndarray:
        """Inverse of project: pixel + camera-frame depth back to a world point."""
        p = np.array([(px - self.cx) / self.fx * depth,
                      (py - self.cy) / self.fy * depth,
                      depth])
        return self.R.T @ (p - self.t)


def pack_cameras(cameras: list[Camera]):
    """Pack a camera list into flat arrays consumable by the numeric kernels."""
    n = len(cameras)
    cam_R = np.stack([c.R for c in cameras]).astype(np.float64)
    cam_t = np.stack([c.t for c in cameras]).astype(np.float64)
    cam_f = np.array([[c.fx, c.fy] for c in cameras], dtype=np.float64)
    cam_c = np.array([[c.cx, c.cy] for c in cameras], dtype=np.float64)
    cam_wh = np.array([[c.width, c.height] for c in cameras], dtype=np.int64)
    assert cam_R.shape == (n, 3, 3)
    return cam_R, cam_t, cam_f, cam_c, cam_wh


def save_cameras(path, cameras: list[Camera]) -> None:
    data = {
        "convention": CONVENTION,
        "cameras": [
            {
                "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
                "width": c.width, "height": c.height,
                "rotation": [float(v) for v in c.R.reshape(-1)],
                "translation": [float(v) for v in c.t],
            }
            for c in cameras
        ],
    }
    with open(path, "w") as f:
        json.dump(data, f, indent=1)
        f.write("\n")


def load_cameras(path) -> list[Camera]:
    with open(path) as f:
        data = json.load(f)
    entries = data["cameras"] if isinstance(data, dict) else data
    cams = []
    for e in entries:
        cams.append(Camera(
            fx=e["fx"], fy=e["fy"], cx=e["cx"], cy=e["cy"],
            width=int(e["width"]), height=int(e["height"]),
            R=np.array(e["rotation"], dtype=np.float64).reshape(3, 3),
            t=np.array(e["translation"], dtype=np.float64),
        ))
    return cams
