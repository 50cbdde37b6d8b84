"""Analytic polarized-scene generator for tests and demos.

Renders multi-view four-direction intensity planes plus AoP/DoP from an
analytic shape (sphere, ellipsoid, or a supplied mesh) under a known SH
illumination. By construction the ground-truth state is a near-zero of
the photometric term and, noise-free, an exact zero of the polarimetric
term:

  rgb_min = albedo * shading * color_scale       (the model the cost fits)
  dop     = dop_scale * sin^2(zenith)
  aop     = projected azimuth of the surface normal, optionally flipped
            by pi/2 per pixel (specular_fraction) and perturbed by
            Gaussian noise, wrapped to [0, pi)
  rgb_int = rgb_min / (1 - dop)

Background pixels carry zero intensity and zero DoP, which makes them
inert in every cost term.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, save_cameras
from .io import write_ply
from .kernels import _impl, cpu
from .mesh import TriMesh, icosphere
from .polarimetry import PolarizationImageSet, forward_directions
from .shading import Illumination


@dataclass
class SyntheticScene:
    shape: str = "sphere"                      # sphere | ellipsoid | mesh
    radius: float = 1.0
    radii: tuple = (1.0, 0.8, 0.6)             # ellipsoid semi-axes
    center: tuple = (0.0, 0.0, 0.0)
    mesh: TriMesh | None = None                # for shape == "mesh"
    albedo_mode: str = "constant"              # constant | gradient | checker
    albedo_color: tuple = (0.6, 0.45, 0.3)
    albedo_color2: tuple = (0.2, 0.35, 0.55)   # second checker color
    checker_freq: float = 2.0
    illumination: Illumination = field(
        default_factory=lambda: Illumination(
            basis=np.array([1.0, 0.2, 0.15, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0]),
            scale=np.array([1.0, 1.0, 1.0])))
    n_cameras: int = 20
    camera_distance: float = 3.0
    camera_placement: str = "sphere"           # sphere | ring
    image_size: tuple = (128, 128)             # (width, height)
    focal: float = 160.0
    dop_scale: float = 0.8
    specular_fraction: float = 0.0
    aop_noise_sigma: float = 0.0
    seed: int = 0
    gt_subdivisions: int = 4
    init_sigma: float = 0.02                   # initial-mesh perturbation, fraction of diag

    def __post_init__(self):
        if self.shape not in ("sphere", "ellipsoid", "mesh"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.shape == "mesh" and self.mesh is None:
            raise ValueError("shape 'mesh' requires a mesh")
        if not 0.0 <= self.dop_scale <= 1.0:
            raise ValueError("dop_scale must be in [0, 1]")
        if not 0.0 <= self.specular_fraction <= 1.0:
            raise ValueError("specular_fraction must be in [0, 1]")

    # -- albedo field -------------------------------------------------------

    def albedo_at(self, points: np.ndarray) -> np.ndarray:
        """Ground-truth albedo for world points (..., 3)."""
        c1 = np.asarray(self.albedo_color)
        if self.albedo_mode == "constant":
            return np.broadcast_to(c1, points.shape).copy()
        rel = points - np.asarray(self.center)
        ext = max(np.max(np.abs(rel)), 1e-12)
        if self.albedo_mode == "gradient":
            f = np.clip((rel[..., 2] / ext + 1.0) / 2.0, 0.0, 1.0)[..., None]
            return (1.0 - f) * c1 + f * np.asarray(self.albedo_color2)
        if self.albedo_mode == "checker":
            cells = np.floor(self.checker_freq * rel / ext).astype(np.int64)
            odd = (cells.sum(axis=-1) % 2).astype(bool)[..., None]
            return np.where(odd, np.asarray(self.albedo_color2), c1)
        raise ValueError(f"unknown albedo_mode {self.albedo_mode!r}")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "shape", "radius", "radii", "center", "albedo_mode", "albedo_color",
            "albedo_color2", "checker_freq", "n_cameras", "camera_distance",
            "camera_placement", "image_size", "focal", "dop_scale",
            "specular_fraction", "aop_noise_sigma", "seed", "gt_subdivisions",
            "init_sigma")}
        for k in ("radii", "center", "albedo_color", "albedo_color2", "image_size"):
            d[k] = list(d[k])
        d["illumination"] = {"basis": self.illumination.basis.tolist(),
                             "scale": self.illumination.scale.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict, mesh: TriMesh | None = None) -> "SyntheticScene":
        d = dict(d)
        ill = d.pop("illumination", None)
        kwargs = {}
        for k in ("radii", "center", "albedo_color", "albedo_color2", "image_size"):
            if k in d:
                kwargs[k] = tuple(d.pop(k))
        kwargs.update(d)
        if ill is not None:
            kwargs["illumination"] = Illumination(np.asarray(ill["basis"], dtype=np.float64),
                                                  np.asarray(ill["scale"], dtype=np.float64))
        return cls(mesh=mesh, **kwargs)


# ---------------------------------------------------------------------------
# Cameras

def _look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera rotation with +z toward the target, y down-ish."""
    z = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    if abs(z.dot(up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def make_cameras(scene: SyntheticScene) -> list[Camera]:
    """Cameras on a ring or a Fibonacci sphere, all looking at the center."""
    w, h = scene.image_size
    n = scene.n_cameras
    center = np.asarray(scene.center, dtype=np.float64)
    cams = []
    for i in range(n):
        if scene.camera_placement == "ring":
            a = 2.0 * np.pi * i / n
            d = np.array([np.cos(a), np.sin(a), 0.0])
        elif scene.camera_placement == "sphere":
            # Fibonacci lattice, avoiding the exact poles
            zc = 1.0 - 2.0 * (i + 0.5) / n
            r = np.sqrt(max(0.0, 1.0 - zc * zc))
            a = np.pi * (1.0 + np.sqrt(5.0)) * i
            d = np.array([r * np.cos(a), r * np.sin(a), zc])
        else:
            raise ValueError(f"unknown camera_placement {scene.camera_placement!r}")
        pos = center + scene.camera_distance * d
        R = _look_at(pos, center)
        t = -R @ pos
        cams.append(Camera(fx=scene.focal, fy=scene.focal, cx=(w - 1) / 2.0,
                           cy=(h - 1) / 2.0, width=w, height=h, R=R, t=t))
    return cams


# ---------------------------------------------------------------------------
# Ray intersection

def _intersect(scene: SyntheticScene, origin: np.ndarray, dirs: np.ndarray):
    """Nearest hit along unit rays; returns (hit mask, points, unit normals)."""
    c = np.asarray(scene.center, dtype=np.float64)
    if scene.shape in ("sphere", "ellipsoid"):
        radii = (np.full(3, scene.radius) if scene.shape == "sphere"
                 else np.asarray(scene.radii, dtype=np.float64))
        # scale to the unit sphere
        o = (origin - c) / radii
        d = dirs / radii
        a = (d * d).sum(axis=-1)
        b = 2.0 * (o * d).sum(axis=-1)
        cc = (o * o).sum() - 1.0
        disc = b * b - 4.0 * a * cc
        hit = disc > 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t = (-b - sq) / (2.0 * a)
        hit &= t > 1e-9
        pts = origin + t[..., None] * dirs
        nrm = (pts - c) / radii ** 2
        nn = np.linalg.norm(nrm, axis=-1, keepdims=True)
        nrm = nrm / np.where(nn > 0, nn, 1.0)
        return hit, pts, nrm
    # triangle mesh: exact ray casting
    flat = np.ascontiguousarray(dirs.reshape(-1, 3))
    t, fidx = _impl.raycast_mesh(np.ascontiguousarray(origin, dtype=np.float64),
                                 flat, scene.mesh.vertices, scene.mesh.faces)
    hit = (fidx >= 0).reshape(dirs.shape[:-1])
    pts = origin + t.reshape(dirs.shape[:-1])[..., None] * dirs
    fn = cpu.face_normals(scene.mesh.vertices, scene.mesh.faces)
    nrm = np.zeros_like(dirs)
    nrm.reshape(-1, 3)[fidx >= 0] = fn[fidx[fidx >= 0]]
    # orient toward the ray origin
    flip = (nrm * dirs).sum(axis=-1) > 0
    nrm[flip] *= -1.0
    return hit, pts, nrm


# ---------------------------------------------------------------------------
# Rendering

def render_view(scene: SyntheticScene, cam: Camera,
                rng: np.random.Generator) -> PolarizationImageSet:
    """Render one camera; consumes from `rng` only at pixels that hit."""
    w, h = cam.width, cam.height
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d_cam = np.stack([(xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy, np.ones_like(xs)], axis=-1)
    dirs = d_cam @ cam.R  # R^T applied row-wise
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origin = cam.position

    hit, pts, nrm = _intersect(scene, origin, dirs)
    K = scene.albedo_at(pts)
    S = np.maximum(cpu.sh_shade_array(nrm, scene.illumination.basis), 0.0)
    rgb_min = np.where(hit[..., None], K * S[..., None] * scene.illumination.scale, 0.0)

    cos_zen = np.clip(-(nrm * dirs).sum(axis=-1), -1.0, 1.0)
    dop = np.where(hit, scene.dop_scale * (1.0 - cos_zen ** 2), 0.0)

    n_cam = nrm @ cam.R.T
    aop = np.mod(np.arctan2(-n_cam[..., 1], n_cam[..., 0]), np.pi)
    if scene.specular_fraction > 0.0:
        flips = rng.random(aop.shape) < scene.specular_fraction
        aop = np.mod(aop + np.where(flips, np.pi / 2.0, 0.0), np.pi)
    if scene.aop_noise_sigma > 0.0:
        aop = np.mod(aop + rng.normal(0.0, scene.aop_noise_sigma, aop.shape), np.pi)
    aop = np.where(hit, aop, 0.0)

    rgb_int = rgb_min / np.maximum(1.0 - dop, 1e-6)[..., None]
    i0, i45, i90, i135 = forward_directions(aop[..., None], dop[..., None], rgb_int)
    return PolarizationImageSet(i0=i0, i45=i45, i90=i90, i135=i135,
                                rgb_int=rgb_int, rgb_min=rgb_min,
                                aop=aop, dop=dop).validate()


def ground_truth_mesh(scene: SyntheticScene) -> TriMesh:
    if scene.shape == "mesh":
        return scene.mesh.copy()
    mesh = icosphere(scene.gt_subdivisions, scene.radius, scene.center)
    if scene.shape == "ellipsoid":
        c = np.asarray(scene.center)
        mesh.vertices = c + (mesh.vertices - c) / scene.radius * np.asarray(scene.radii)
        mesh.invalidate()
    mesh.albedo = scene.albedo_at(mesh.vertices)
    return mesh


def render_views(scene: SyntheticScene):
    """Render all cameras; returns (image_sets, gt_mesh, cameras)."""
    cams = make_cameras(scene)
    rng = np.random.default_rng(scene.seed)
    sets = [render_view(scene, cam, rng) for cam in cams]
    return sets, ground_truth_mesh(scene), cams


def perturb_mesh(mesh: TriMesh, sigma: float, seed: int = 0) -> TriMesh:
    """Gaussian displacement along vertex normals; sigma is a fraction of
    the bounding-box diagonal. Deterministic per seed."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    out = mesh.copy()
    if sigma == 0:
        return out
    rng = np.random.default_rng(seed)
    amp = sigma * mesh.bbox_diagonal()
    out.vertices = out.vertices + rng.normal(0.0, amp, mesh.n_vertices)[:, None] * mesh.vertex_normals()
    out.invalidate()
    return out


# ---------------------------------------------------------------------------
# Dataset serialization

def save_dataset(scene: SyntheticScene, out_dir: str):
    """Write the on-disk layout the refinement pipeline consumes.

    out_dir/{scene.json, cameras.json, gt_mesh.ply, initial_mesh.ply,
    views/view_%03d/{i0,i45,i90,i135,rgb_int,rgb_min,aop,dop}.pfm}
    """
    sets, gt_mesh, cams = render_views(scene)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "scene.json"), "w") as f:
        json.dump(scene.to_dict(), f, indent=2, sort_keys=True)
    save_cameras(os.path.join(out_dir, "cameras.json"), cams)
    write_ply(os.path.join(out_dir, "gt_mesh.ply"), gt_mesh.vertices, gt_mesh.faces,
              albedo=gt_mesh.albedo)
    init = perturb_mesh(gt_mesh, scene.init_sigma, scene.seed)
    write_ply(os.path.join(out_dir, "initial_mesh.ply"), init.vertices, init.faces)
    for i, s in enumerate(sets):
        s.save(os.path.join(out_dir, "views", f"view_{i:03d}"))
    return sets, gt_mesh, cams


def load_views(out_dir: str) -> list[PolarizationImageSet]:
    views_dir = os.path.join(out_dir, "views")
    names = sorted(d for d in os.listdir(views_dir) if d.startswith("view_"))
    return [PolarizationImageSet.load(os.path.join(views_dir, n)) for n in names]
