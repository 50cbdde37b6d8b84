"""The refinement objective: photometric, polarimetric and smoothness terms.

total = e_pho + tau1 * e_pol + tau2 * e_gsm + tau3 * e_psm

e_pho  sum over vertices and visible cameras of the squared difference
       between the observed RGB (sampled bilinearly at the vertex
       projection) and albedo * SH shading * color scale, each vertex
       normalized by its visible-camera count.
e_pol  DoP-weighted concave penalty on the distance between the image-
       plane azimuth of the vertex normal and the nearest of the four
       azimuth candidates implied by the AoP sample (pi and pi/2
       ambiguities both allowed).
e_gsm  per-face penalty on the angle between a face normal and the
       average normal of its edge neighbors.
e_psm  weighted squared albedo differences over mesh edges, with weights
       precomputed from chromaticity/intensity differences in the images.

AoP and DoP are sampled nearest-neighbor (bilinear interpolation across
the AoP wrap would corrupt angles); RGB is sampled bilinearly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .camera import Camera, pack_cameras
from .kernels import cpu
from .mesh import TriMesh, _csr_from_lists

log = logging.getLogger(__name__)

GRAD_EPS_REL = 1e-6
GRAD_FLOOR_SCALE = 1e-4  # times bbox diagonal for positions, absolute for albedo/illum


@dataclass
class ParamState:
    """Optimization variables: vertex positions, vertex albedos, per-image illumination."""

    vertices: np.ndarray   # (m, 3)
    albedo: np.ndarray     # (m, 3)
    illum: np.ndarray      # (n, 12): 9 SH coefficients + RGB scale

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.albedo = np.ascontiguousarray(self.albedo, dtype=np.float64)
        self.illum = np.ascontiguousarray(self.illum, dtype=np.float64)
        if self.vertices.shape != self.albedo.shape or self.illum.shape[1] != 12:
            raise ValueError("inconsistent parameter dimensions")

    def copy(self) -> "ParamState":
        return ParamState(self.vertices.copy(), self.albedo.copy(), self.illum.copy())


@dataclass
class CostBreakdown:
    e_pho: float
    e_pol: float
    e_gsm: float
    e_psm: float
    tau1: float
    tau2: float
    tau3: float
    dropped: int = 0
    clamped: int = 0

    @property
    def total(self) -> float:
        return self.e_pho + self.tau1 * self.e_pol + self.tau2 * self.e_gsm + self.tau3 * self.e_psm

    def to_dict(self) -> dict:
        return {"e_pho": self.e_pho, "e_pol": self.e_pol, "e_gsm": self.e_gsm,
                "e_psm": self.e_psm, "total": self.total,
                "dropped": self.dropped, "clamped": self.clamped}


# ---------------------------------------------------------------------------
# Angle helpers

def projected_azimuth(normal, cam: Camera) -> float:
    """Azimuth of a normal's image-plane projection, in [0, 2*pi); NaN if degenerate.

    The image y axis points down, so the angle of the projected normal
    measured counter-clockwise from the x axis uses -y.
    """
    n = cam.R @ np.asarray(normal, dtype=np.float64)
    if np.hypot(n[0], n[1]) < 1e-9:
        return np.nan
    a = np.arctan2(-n[1], n[0])
    return float(a + 2.0 * np.pi) if a < 0 else float(a)


def eta(alpha, phi):
    """Distance from azimuth alpha to the nearest AoP candidate, in [0, pi/4].

    Candidates are phi + {-pi/2, 0, pi/2, pi}: the pi ambiguity plus the
    specular/diffuse pi/2 ambiguity. Evaluated as the minimum over seven
    absolute offset differences.
    """
    if np.isscalar(alpha) and np.isscalar(phi):
        return kernels.eta_scalar(float(alpha), float(phi))
    return cpu.eta_array(alpha, phi)


def polarimetric_weight(theta, k: float):
    """Concave per-sample penalty in [0, 1]: 0 at theta=1, 1 at theta=0."""
    ek = np.exp(-k)
    return ((np.exp(-k * np.asarray(theta)) - ek) / (1.0 - ek)) ** 2


# ---------------------------------------------------------------------------
# Image stack

@dataclass
class ViewImages:
    """Per-view observation planes stacked for kernel consumption."""

    rgb: np.ndarray    # (n, H, W, 3) photometric observation (I_min or I_int)
    aop: np.ndarray    # (n, H, W)
    dop: np.ndarray    # (n, H, W)

    @classmethod
    def from_sets(cls, image_sets, use_min: bool = True) -> "ViewImages":
        rgb = np.ascontiguousarray(
            np.stack([s.rgb_min if use_min else s.rgb_int for s in image_sets]), dtype=np.float64)
        aop = np.ascontiguousarray(np.stack([s.aop for s in image_sets]), dtype=np.float64)
        dop = np.ascontiguousarray(np.stack([s.dop for s in image_sets]), dtype=np.float64)
        return cls(rgb, aop, dop)


# ---------------------------------------------------------------------------
# Smoothness weights

def psm_weights(mesh: TriMesh, cameras: list[Camera], images: ViewImages,
                sigma_chroma: float = 0.05, sigma_lum: float = 0.2) -> np.ndarray:
    """Edge weights for the albedo smoothness term, aligned with the vv CSR.

    For each mesh edge the weight averages, over cameras seeing both
    endpoints, a Gaussian falloff in chromaticity distance and intensity
    difference of the projected observations. Large image differences
    mean "allow an albedo change here" (small weight). Edges whose
    endpoints share no camera get weight 1.
    """
    indptr, idx = mesh.vertex_neighbors
    vis = mesh.visibility
    samples = {}  # (vertex, cam) -> rgb or None

    def sample(v, c):
        key = (v, c)
        if key not in samples:
            cam = cameras[c]
            px, py, z = cam.project(mesh.vertices[v])
            if not (z > 0 and 0 <= px <= cam.width - 1 and 0 <= py <= cam.height - 1):
                samples[key] = None
            else:
                img = images.rgb[c]
                x0 = min(int(px), cam.width - 2)
                y0 = min(int(py), cam.height - 2)
                fx, fy = px - x0, py - y0
                samples[key] = ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x0 + 1]
                                + (1 - fx) * fy * img[y0 + 1, x0] + fx * fy * img[y0 + 1, x0 + 1])
        return samples[key]

    def chroma(rgb):
        s = rgb.sum()
        return rgb / s if s > 1e-12 else np.full(3, 1.0 / 3.0)

    w = np.ones(len(idx))
    for i in range(mesh.n_vertices):
        for p in range(indptr[i], indptr[i + 1]):
            j = idx[p]
            if j < i:
                continue  # compute once per undirected edge, mirror below
            common = np.intersect1d(vis[i], vis[j]) if vis is not None else []
            vals = []
            for c in common:
                si, sj = sample(i, int(c)), sample(j, int(c))
                if si is None or sj is None:
                    continue
                d_ch = np.linalg.norm(chroma(si) - chroma(sj))
                d_lum = abs(si.mean() - sj.mean())
                vals.append(np.exp(-(d_ch / sigma_chroma) ** 2) * np.exp(-(d_lum / sigma_lum) ** 2))
            if vals:
                w[p] = float(np.mean(vals))
                # mirror onto the (j, i) slot
                jp = indptr[j] + int(np.searchsorted(idx[indptr[j]:indptr[j + 1]], i))
                w[jp] = w[p]
    return w


def photometric_smoothness(albedo, vv_indptr, vv_idx, w) -> float:
    """sum_i sum_{j in A(i)} w_ij ||K_i - K_j||^2 (both orderings counted)."""
    m = albedo.shape[0]
    owner = np.repeat(np.arange(m), np.diff(vv_indptr))
    diff = albedo[owner] - albedo[vv_idx]
    return float((w * (diff ** 2).sum(axis=1)).sum())


def total_cost(state: "ParamState", mesh: TriMesh, cameras: list[Camera],
               images: "ViewImages", options: "CostOptions | None" = None,
               weights=None) -> CostBreakdown:
    """One-shot evaluation of all four terms (builds a CostProblem)."""
    return CostProblem(mesh, cameras, images, options, weights).breakdown(state)


def geometric_smoothness(verts, faces, face_adj, t_exp: float) -> float:
    return float(kernels.gsm_cost(np.ascontiguousarray(verts, dtype=np.float64),
                                  np.ascontiguousarray(faces, dtype=np.int64),
                                  face_adj, t_exp))


# ---------------------------------------------------------------------------
# Cost problem

@dataclass
class CostOptions:
    tau1: float = 60.0
    tau2: float = 0.1
    tau3: float = 2.0
    k: float = 0.5
    t: float = 2.2
    use_dop_weight: bool = True


class CostProblem:
    """Evaluates the total cost and its numeric gradient for a frozen stage.

    Topology, visibility and the albedo smoothness weights are fixed at
    construction; only the ParamState varies. Gradients are central
    differences that re-evaluate the locally affected cost contributions
    per parameter (observations frozen at the base state; see kernels).
    """

    def __init__(self, mesh: TriMesh, cameras: list[Camera], images: ViewImages,
                 options: CostOptions | None = None, weights: np.ndarray | None = None):
        if images.rgb.shape[0] != len(cameras):
            raise ValueError("image stack does not match the camera count")
        hw = {(c.height, c.width) for c in cameras}
        if hw != {images.rgb.shape[1:3]}:
            raise ValueError("all views must share the image dimensions")
        self.mesh = mesh
        self.cameras = cameras
        self.images = images
        self.options = options or CostOptions()
        self.cam_R, self.cam_t, self.cam_f, self.cam_c, self.cam_wh = pack_cameras(cameras)
        self.vis_indptr, self.vis_cam = mesh.visibility_csr()
        self.vf_indptr, self.vf_idx = mesh.vertex_faces
        self.vv_indptr, self.vv_idx = mesh.vertex_neighbors
        self.face_adj = mesh.face_adjacency
        self.weights = psm_weights(mesh, cameras, images) if weights is None else weights
        self.bbox_diag = mesh.bbox_diagonal()

        # faces whose gsm contribution depends on vertex i: faces touching i
        # plus their edge neighbors
        m = mesh.n_vertices
        aff = [set() for _ in range(m)]
        for i in range(m):
            for p in range(self.vf_indptr[i], self.vf_indptr[i + 1]):
                r = self.vf_idx[p]
                aff[i].add(int(r))
                for q in self.face_adj[r]:
                    if q >= 0:
                        aff[i].add(int(q))
        self.aff_indptr, self.aff_idx = _csr_from_lists([sorted(s) for s in aff])

        # AoP/DoP samples are frozen at the stage-start projections: they
        # weight and orient the polarimetric term but are not re-fetched
        # as vertices move within the stage (visibility is equally
        # frozen; both are refreshed when the next stage's problem is
        # built). Without this, sliding a projection onto a zero-DoP
        # background pixel would silently discharge the term.
        counts = np.diff(self.vis_indptr)
        self.samp_vert = np.repeat(np.arange(m, dtype=np.int64), counts)
        (self.samp_valid0, _, _, _, _,
         self.samp_aop0, self.samp_dop0) = self._precompute_samples_at(mesh.vertices)

        # per-camera sample lists for illumination gradients
        order = np.argsort(self.vis_cam, kind="stable")
        self.cam_samp_sidx = np.ascontiguousarray(order.astype(np.int64))
        self.cam_samp_indptr = np.zeros(len(cameras) + 1, dtype=np.int64)
        np.add.at(self.cam_samp_indptr[1:], self.vis_cam, 1)
        self.cam_samp_indptr = np.cumsum(self.cam_samp_indptr)
        self.inv_nvis = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)

    # -- evaluation --------------------------------------------------------

    def vertex_normals(self, verts) -> np.ndarray:
        return kernels.vertex_normals(np.ascontiguousarray(verts), self.mesh.faces,
                                      self.vf_indptr, self.vf_idx)

    def breakdown(self, state: ParamState, resample_pol: bool = False) -> CostBreakdown:
        """Cost terms at `state`. By default the polarimetric term uses the
        stage-frozen AoP/DoP samples; resample_pol re-fetches them at the
        state's current projections instead."""
        o = self.options
        vn = self.vertex_normals(state.vertices)
        if resample_pol:
            _, _, _, _, _, aop_s, dop_s = self._precompute_samples_at(state.vertices)
        else:
            aop_s, dop_s = self.samp_aop0, self.samp_dop0
        e_pho, e_pol, dropped, clamped = kernels.data_cost(
            state.vertices, vn, state.albedo, state.illum,
            self.vis_indptr, self.vis_cam,
            self.cam_R, self.cam_t, self.cam_f, self.cam_c, self.cam_wh,
            self.images.rgb, aop_s, dop_s,
            o.k, o.use_dop_weight)
        e_gsm = float(kernels.gsm_cost(state.vertices, self.mesh.faces, self.face_adj, o.t))
        e_psm = photometric_smoothness(state.albedo, self.vv_indptr, self.vv_idx, self.weights)
        return CostBreakdown(float(e_pho), float(e_pol), e_gsm, e_psm,
                             o.tau1, o.tau2, o.tau3, int(dropped), int(clamped))

    def total(self, state: ParamState) -> float:
        return self.breakdown(state).total

    def photometric_term(self, state: ParamState) -> float:
        return self.breakdown(state).e_pho

    def polarimetric_term(self, state: ParamState) -> float:
        return self.breakdown(state, resample_pol=True).e_pol

    def geometric_term(self, state: ParamState) -> float:
        return geometric_smoothness(state.vertices, self.mesh.faces, self.face_adj, self.options.t)

    def smoothness_term(self, state: ParamState) -> float:
        return photometric_smoothness(state.albedo, self.vv_indptr, self.vv_idx, self.weights)

    # -- gradient ----------------------------------------------------------

    def _precompute_samples_at(self, vertices: np.ndarray):
        """Observation snapshot for every (vertex, camera) sample at the
        given geometry: bilinear cell anchors + nearest AoP/DoP, with
        off-image projections clamped to the image rectangle."""
        cams = self.vis_cam
        verts = np.asarray(vertices)[self.samp_vert]
        p_cam = np.einsum("sij,sj->si", self.cam_R[cams], verts) + self.cam_t[cams]
        z = p_cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = self.cam_f[cams, 0] * p_cam[:, 0] / z + self.cam_c[cams, 0]
            py = self.cam_f[cams, 1] * p_cam[:, 1] / z + self.cam_c[cams, 1]
        w = self.cam_wh[cams, 0]
        h = self.cam_wh[cams, 1]
        valid = z > 0
        px = np.clip(np.where(valid, px, 0.0), 0.0, w - 1)
        py = np.clip(np.where(valid, py, 0.0), 0.0, h - 1)
        x0 = np.minimum(px.astype(np.int64), w - 2)
        y0 = np.minimum(py.astype(np.int64), h - 2)
        rgb = self.images.rgb
        corners = np.stack([rgb[cams, y0, x0], rgb[cams, y0, x0 + 1],
                            rgb[cams, y0 + 1, x0], rgb[cams, y0 + 1, x0 + 1]], axis=1)
        fx = (px - x0)[:, None]
        fy = (py - y0)[:, None]
        obs = ((1 - fx) * (1 - fy) * corners[:, 0] + fx * (1 - fy) * corners[:, 1]
               + (1 - fx) * fy * corners[:, 2] + fx * fy * corners[:, 3])
        ix = np.floor(px + 0.5).astype(np.int64)
        iy = np.floor(py + 0.5).astype(np.int64)
        aop_s = np.where(valid, self.images.aop[cams, iy, ix], np.nan)
        dop_s = np.where(valid, self.images.dop[cams, iy, ix], 0.0)
        return (valid.astype(np.uint8), np.ascontiguousarray(obs),
                x0.astype(np.float64), y0.astype(np.float64),
                np.ascontiguousarray(corners), aop_s, dop_s)

    def gradient(self, state: ParamState):
        """Central-difference gradient; returns (d_vertices, d_albedo, d_illum).

        Photometric observations are anchored at the state's current
        projections (so probes differentiate through a fixed bilinear
        cell); the polarimetric samples are the stage-frozen ones, same
        as in breakdown()."""
        o = self.options
        (valid, obs, cellx, celly, corners, _, _) = self._precompute_samples_at(state.vertices)
        aop_s, dop_s = self.samp_aop0, self.samp_dop0
        verts = state.vertices.copy()
        albedo = state.albedo.copy()
        illum = state.illum.copy()
        g_pos = kernels.grad_position(
            verts, self.mesh.faces, albedo, illum,
            self.vis_indptr, self.vis_cam,
            valid, obs, cellx, celly, corners, aop_s, dop_s,
            self.vf_indptr, self.vf_idx, self.vv_indptr, self.vv_idx,
            self.aff_indptr, self.aff_idx, self.face_adj,
            self.cam_R, self.cam_t, self.cam_f, self.cam_c,
            o.k, o.tau1, o.tau2, o.t, o.use_dop_weight,
            GRAD_EPS_REL, GRAD_FLOOR_SCALE * self.bbox_diag)
        vn = self.vertex_normals(state.vertices)
        g_alb = kernels.grad_albedo(
            vn, albedo, illum, self.vis_indptr, self.vis_cam,
            valid, obs, self.vv_indptr, self.vv_idx, self.weights,
            o.tau3, GRAD_EPS_REL, GRAD_FLOOR_SCALE)
        g_ill = kernels.grad_illum(
            vn, albedo, illum, self.cam_samp_indptr, self.cam_samp_sidx,
            valid, obs, self.samp_vert, self.inv_nvis,
            GRAD_EPS_REL, GRAD_FLOOR_SCALE)
        return g_pos, g_alb, g_ill
