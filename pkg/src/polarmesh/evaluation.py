"""Geometry, albedo and illumination error metrics.

Accuracy is the mean distance from each estimated point to its nearest
ground-truth point; completeness is the mirror image. Albedo error is a
mean per-view RMSE between rendered albedo maps after fixing the global
albedo/illumination scale ambiguity by matching median luminance.
Illumination error compares cube-map renders of the SH coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .camera import Camera
from .io import write_ply
from .kernels import cpu, rasterize_depth
from .mesh import TriMesh
from .shading import Illumination


@dataclass
class GeometryErrorReport:
    accuracy: float
    completeness: float
    est_distances: np.ndarray = field(repr=False)
    gt_distances: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "completeness": self.completeness,
                "accuracy_max": float(self.est_distances.max()),
                "completeness_max": float(self.gt_distances.max())}


def _nn_distances(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if query.size == 0 or ref.size == 0:
        raise ValueError("point sets must be non-empty")
    d, _ = cKDTree(ref).query(query, k=1)
    return d


def accuracy(est: np.ndarray, gt: np.ndarray) -> float:
    """Mean nearest-neighbor distance from estimated points to ground truth."""
    return float(_nn_distances(est, gt).mean())


def completeness(est: np.ndarray, gt: np.ndarray) -> float:
    """Mean nearest-neighbor distance from ground-truth points to the estimate."""
    return float(_nn_distances(gt, est).mean())


def geometry_report(est: np.ndarray, gt: np.ndarray) -> GeometryErrorReport:
    d_est = _nn_distances(est, gt)
    d_gt = _nn_distances(gt, est)
    return GeometryErrorReport(float(d_est.mean()), float(d_gt.mean()), d_est, d_gt)


def export_error_map(path, points: np.ndarray, distances: np.ndarray):
    """Per-point distances as PLY vertex quality, for error-map visualization."""
    write_ply(path, points, np.zeros((0, 3), dtype=np.int64),
              quality=np.asarray(distances, dtype=np.float64))


# ---------------------------------------------------------------------------
# Albedo

def luminance(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb).mean(axis=-1)


def fix_albedo_gauge(est_albedo: np.ndarray, gt_albedo: np.ndarray) -> np.ndarray:
    """Scale estimated albedos so median luminance matches the ground truth.

    The cost is invariant under albedo*a, light_scale/a, so absolute
    albedo level is meaningless without this normalization.
    """
    med_est = float(np.median(luminance(est_albedo)))
    med_gt = float(np.median(luminance(gt_albedo)))
    if med_est <= 0:
        return np.asarray(est_albedo, dtype=np.float64).copy()
    return np.asarray(est_albedo, dtype=np.float64) * (med_gt / med_est)


def render_albedo_map(mesh: TriMesh, albedo: np.ndarray, cam: Camera,
                      eps_z: float = 1e-3):
    """Vertex albedos splatted at their projections, z-buffered.

    Returns (H, W, 3) colors and an (H, W) coverage mask.
    """
    depth = rasterize_depth(mesh.vertices, mesh.faces, cam.R, cam.t,
                            cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                            cam.position, True)
    img = np.zeros((cam.height, cam.width, 3))
    zbuf = np.full((cam.height, cam.width), np.inf)
    px, py, z = cam.project_many(mesh.vertices)
    for i in range(mesh.n_vertices):
        if not (z[i] > 0 and 0 <= px[i] <= cam.width - 1 and 0 <= py[i] <= cam.height - 1):
            continue
        x = int(np.floor(px[i] + 0.5))
        y = int(np.floor(py[i] + 0.5))
        if not np.isfinite(depth[y, x]) or z[i] > depth[y, x] * (1.0 + eps_z):
            continue
        if z[i] < zbuf[y, x]:
            zbuf[y, x] = z[i]
            img[y, x] = albedo[i]
    return img, np.isfinite(zbuf)


def albedo_rmse(est_mesh: TriMesh, est_albedo: np.ndarray,
                gt_mesh: TriMesh, gt_albedo: np.ndarray,
                cameras: list[Camera]) -> float:
    """Mean per-view RMSE of splatted albedo maps, gauge-fixed, over pixels
    covered in both renders. Views with no coverage are skipped."""
    est_albedo = fix_albedo_gauge(est_albedo, gt_albedo)
    errs = []
    for cam in cameras:
        img_e, m_e = render_albedo_map(est_mesh, est_albedo, cam)
        img_g, m_g = render_albedo_map(gt_mesh, gt_albedo, cam)
        both = m_e & m_g
        if not both.any():
            continue
        errs.append(float(np.sqrt(((img_e[both] - img_g[both]) ** 2).mean())))
    if not errs:
        raise ValueError("no view had overlapping coverage")
    return float(np.mean(errs))


# ---------------------------------------------------------------------------
# Illumination

_CUBE_FACES = {  # face -> (axis unit, u axis, v axis)
    "+x": ((1, 0, 0), (0, 0, -1), (0, -1, 0)),
    "-x": ((-1, 0, 0), (0, 0, 1), (0, -1, 0)),
    "+y": ((0, 1, 0), (1, 0, 0), (0, 0, 1)),
    "-y": ((0, -1, 0), (1, 0, 0), (0, 0, -1)),
    "+z": ((0, 0, 1), (1, 0, 0), (0, -1, 0)),
    "-z": ((0, 0, -1), (-1, 0, 0), (0, -1, 0)),
}


def render_cubemap(illum: Illumination, size: int = 64) -> np.ndarray:
    """SH illumination sampled over cube-map directions; (6, size, size, 3)."""
    grid = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    u, v = np.meshgrid(grid, grid)
    faces = []
    for axis, ua, va in _CUBE_FACES.values():
        d = (np.asarray(axis, dtype=np.float64)
             + u[..., None] * np.asarray(ua, dtype=np.float64)
             + v[..., None] * np.asarray(va, dtype=np.float64))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        s = cpu.sh_shade_array(d, illum.basis)
        faces.append(s[..., None] * illum.scale)
    return np.stack(faces)


def illumination_rmse(est, gt, size: int = 64) -> float:
    """RMSE between cube-map renders of two illuminations (or mean over lists)."""
    if isinstance(est, Illumination):
        est, gt = [est], [gt]
    if len(est) != len(gt):
        raise ValueError("illumination lists differ in length")
    errs = [float(np.sqrt(((render_cubemap(e, size) - render_cubemap(g, size)) ** 2).mean()))
            for e, g in zip(est, gt)]
    return float(np.mean(errs))


def save_report(path, report: dict):
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
