"""Triangle mesh: adjacency, normals, sqrt(3)-subdivision, visibility.

The mesh is indexed (vertices + faces) with per-vertex RGB albedo and an
optional per-vertex set of visible cameras. Topology queries (vertex and
face adjacency) are built lazily as CSR arrays so they can be handed to
the numeric kernels directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .camera import Camera


class MeshError(ValueError):
    pass


def _csr_from_lists(lists, dtype=np.int64):
    indptr = np.zeros(len(lists) + 1, dtype=np.int64)
    for i, l in enumerate(lists):
        indptr[i + 1] = indptr[i] + len(l)
    idx = np.empty(indptr[-1], dtype=dtype)
    for i, l in enumerate(lists):
        idx[indptr[i]:indptr[i + 1]] = l
    return indptr, idx


@dataclass
class TriMesh:
    vertices: np.ndarray                 # (m, 3) float64
    faces: np.ndarray                    # (F, 3) int64
    albedo: np.ndarray | None = None     # (m, 3) float64
    visibility: list | None = None       # per-vertex arrays of camera indices
    _adj: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.albedo is None:
            self.albedo = np.ones_like(self.vertices)
        else:
            self.albedo = np.ascontiguousarray(self.albedo, dtype=np.float64).reshape(-1, 3)
        m = len(self.vertices)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= m):
            raise MeshError("face references out-of-range vertex index")
        for k in range(3):
            if (self.faces[:, k] == self.faces[:, (k + 1) % 3]).any():
                raise MeshError("face references a vertex twice")

    # -- topology ----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def invalidate(self):
        self._adj.clear()

    def _build_adjacency(self):
        m, faces = self.n_vertices, self.faces
        vf = [[] for _ in range(m)]
        vv = [set() for _ in range(m)]
        for r, (a, b, c) in enumerate(faces):
            for v in (a, b, c):
                vf[v].append(r)
            vv[a].update((b, c))
            vv[b].update((a, c))
            vv[c].update((a, b))
        self._adj["vf"] = _csr_from_lists(vf)
        self._adj["vv"] = _csr_from_lists([sorted(s) for s in vv])

        edge_faces = {}
        for r, f in enumerate(faces):
            for e in range(3):
                key = (min(f[e], f[(e + 1) % 3]), max(f[e], f[(e + 1) % 3]))
                edge_faces.setdefault(key, []).append(r)
        face_adj = np.full((len(faces), 3), -1, dtype=np.int64)
        for r, f in enumerate(faces):
            for e in range(3):
                key = (min(f[e], f[(e + 1) % 3]), max(f[e], f[(e + 1) % 3]))
                for q in edge_faces[key]:
                    if q != r:
                        face_adj[r, e] = q
        self._adj["face_adj"] = face_adj
        self._adj["edge_faces"] = edge_faces

    def _get(self, name):
        if name not in self._adj:
            self._build_adjacency()
        return self._adj[name]

    @property
    def vertex_faces(self):
        """(indptr, idx) CSR of vertex -> adjacent faces."""
        return self._get("vf")

    @property
    def vertex_neighbors(self):
        """(indptr, idx) CSR of vertex -> adjacent vertices."""
        return self._get("vv")

    @property
    def face_adjacency(self):
        """(F, 3) face index across each edge, -1 on boundary."""
        return self._get("face_adj")

    def check_manifold(self):
        """Reject non-manifold or inconsistently oriented meshes."""
        directed = set()
        for f in self.faces:
            for e in range(3):
                key = (int(f[e]), int(f[(e + 1) % 3]))
                if key in directed:
                    raise MeshError(f"non-manifold or inconsistently oriented edge {key}")
                directed.add(key)
        for key, fs in self._get("edge_faces").items():
            if len(fs) > 2:
                raise MeshError(f"edge {key} shared by {len(fs)} faces")
        return self

    # -- geometry ----------------------------------------------------------

    def face_normal(self, r: int) -> np.ndarray:
        n = self.face_normals()[r]
        if not n.any():
            raise MeshError(f"degenerate (zero-area) face {r}")
        return n

    def face_normals(self) -> np.ndarray:
        return kernels.face_normals(self.vertices, self.faces)

    def vertex_normal(self, v: int) -> np.ndarray:
        indptr, _ = self.vertex_faces
        if indptr[v + 1] == indptr[v]:
            raise MeshError(f"isolated vertex {v} has no normal")
        n = self.vertex_normals()[v]
        if not n.any():
            raise MeshError(f"vertex {v}: adjacent faces are all degenerate")
        return n

    def vertex_normals(self) -> np.ndarray:
        indptr, idx = self.vertex_faces
        return kernels.vertex_normals(self.vertices, self.faces, indptr, idx)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces.copy(), self.albedo.copy(),
                       None if self.visibility is None else [v.copy() for v in self.visibility])

    def visibility_csr(self):
        if self.visibility is None:
            raise MeshError("visibility not computed")
        indptr, idx = _csr_from_lists([np.sort(v) for v in self.visibility])
        return indptr, idx


# ---------------------------------------------------------------------------
# Visibility

def compute_visibility(mesh: TriMesh, cameras: list[Camera],
                       eps_z: float = 1e-3, min_facing: float = 0.0):
    """Per-vertex visible-camera sets via z-buffer testing.

    A vertex sees camera c when it projects inside the image, faces the
    camera (normal . view_dir < 0), and its depth does not exceed the
    rasterized buffer around its projection by more than relative eps_z.
    The buffer is rasterized from front-facing triangles only and probed
    as the max over the finite values of the four pixels surrounding the
    projection: the vertex's own surface curves through those pixels, so
    comparing against the min would reject vertices on coarse meshes,
    while an occluder in front still fails the max test.

    min_facing > 0 additionally rejects grazing views: the cosine of the
    angle between the normal and the direction to the camera must exceed
    it. Near-silhouette projections land within a pixel of the object
    boundary, where interpolated image samples mix in background, so
    pipelines typically want ~0.25 here.
    """
    verts = mesh.vertices
    vn = mesh.vertex_normals()
    vis = [[] for _ in range(mesh.n_vertices)]
    for ci, cam in enumerate(cameras):
        depth = kernels.rasterize_depth(
            verts, mesh.faces, cam.R, cam.t, cam.fx, cam.fy, cam.cx, cam.cy,
            cam.width, cam.height, cam.position, True)
        px, py, z = cam.project_many(verts)
        with np.errstate(invalid="ignore"):
            inside = (z > 0) & (px >= 0) & (px <= cam.width - 1) & (py >= 0) & (py <= cam.height - 1)
        to_cam = cam.position - verts
        to_cam = to_cam / np.linalg.norm(to_cam, axis=1, keepdims=True)
        facing = (to_cam * vn).sum(axis=1) > min_facing
        cand = np.nonzero(inside & facing)[0]
        if len(cand) == 0:
            continue
        x0 = np.clip(np.floor(px[cand]).astype(np.int64), 0, cam.width - 1)
        y0 = np.clip(np.floor(py[cand]).astype(np.int64), 0, cam.height - 1)
        x1 = np.minimum(x0 + 1, cam.width - 1)
        y1 = np.minimum(y0 + 1, cam.height - 1)
        probe = np.stack([depth[y0, x0], depth[y0, x1], depth[y1, x0], depth[y1, x1]])
        probe = np.where(np.isfinite(probe), probe, -np.inf)
        buf = probe.max(axis=0)
        # all-background probes (rasterization gaps at silhouettes) pass
        ok = (z[cand] <= buf * (1.0 + eps_z)) | ~np.isfinite(buf)
        for v in cand[ok]:
            vis[v].append(ci)
    mesh.visibility = [np.array(v, dtype=np.int64) for v in vis]
    return mesh.visibility


# ---------------------------------------------------------------------------
# sqrt(3)-subdivision

def _sqrt3_beta(n: int) -> float:
    return (4.0 - 2.0 * np.cos(2.0 * np.pi / n)) / 9.0


def projected_face_areas(mesh: TriMesh, cameras: list[Camera]) -> np.ndarray:
    """Max projected pixel area of each face over the cameras seeing its vertices."""
    if mesh.visibility is None:
        raise MeshError("visibility required before subdivision")
    proj = [cam.project_many(mesh.vertices) for cam in cameras]
    areas = np.zeros(mesh.n_faces)
    for r, f in enumerate(mesh.faces):
        cams = set()
        for v in f:
            cams.update(mesh.visibility[v].tolist())
        best = 0.0
        for c in cams:
            px, py, z = proj[c]
            if not np.all(z[f] > 0):
                continue
            xs, ys = px[f], py[f]
            a = 0.5 * abs((xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0]))
            best = max(best, a)
        areas[r] = best
    return areas


def _sqrt3_step(mesh: TriMesh, smooth: bool) -> TriMesh:
    verts, faces = mesh.vertices, mesh.faces
    m = len(verts)
    centroids = verts[faces].mean(axis=1)
    cen_albedo = mesh.albedo[faces].mean(axis=1)

    new_verts = np.vstack([verts, centroids])
    if smooth:
        indptr, idx = mesh.vertex_neighbors
        boundary = np.zeros(m, dtype=bool)
        for (a, b), fs in mesh._get("edge_faces").items():
            if len(fs) == 1:
                boundary[a] = boundary[b] = True
        for v in range(m):
            nbrs = idx[indptr[v]:indptr[v + 1]]
            n = len(nbrs)
            if n == 0 or boundary[v]:
                continue
            beta = _sqrt3_beta(n)
            new_verts[v] = (1.0 - beta) * verts[v] + beta * verts[nbrs].mean(axis=0)

    # flip every original edge: interior edges pair the two incident
    # centroids, boundary edges keep their single corner triangle
    edge_info = {}
    for r, f in enumerate(faces):
        for e in range(3):
            a, b = int(f[e]), int(f[(e + 1) % 3])
            edge_info.setdefault((min(a, b), max(a, b)), []).append((r, a, b))
    new_faces = []
    for (_, _), inc in sorted(edge_info.items()):
        if len(inc) == 2:
            (f1, a, b), (f2, _, _) = inc
            c1, c2 = m + f1, m + f2
            new_faces.append((a, c2, c1))
            new_faces.append((c2, b, c1))
        else:
            (f1, a, b), = inc
            new_faces.append((a, b, m + f1))

    new_albedo = np.vstack([mesh.albedo, cen_albedo])
    out = TriMesh(new_verts, np.array(new_faces, dtype=np.int64), new_albedo)
    if mesh.visibility is not None:
        cen_vis = []
        for f in faces:
            sets = [set(mesh.visibility[v].tolist()) for v in f]
            inter = sets[0] & sets[1] & sets[2]
            chosen = inter if inter else (sets[0] | sets[1] | sets[2])
            cen_vis.append(np.array(sorted(chosen), dtype=np.int64))
        out.visibility = [v.copy() for v in mesh.visibility] + cen_vis
    return out


def sqrt3_subdivide(mesh: TriMesh, cameras: list[Camera], max_pixel_area: float,
                    smooth: bool = True, max_steps: int = 12,
                    reverify_visibility: bool = False, eps_z: float = 1e-3,
                    min_facing: float = 0.0) -> TriMesh:
    """Subdivide until every face's max projected pixel area is <= max_pixel_area.

    New vertices inherit visibility from the parent face (intersection of
    its corners, falling back to the union) and the mean corner albedo;
    pass reverify_visibility to re-run the depth test instead.
    """
    mesh.check_manifold()
    out = mesh
    for _ in range(max_steps):
        areas = projected_face_areas(out, cameras)
        if areas.max(initial=0.0) <= max_pixel_area:
            break
        out = _sqrt3_step(out, smooth)
    if reverify_visibility and out is not mesh:
        compute_visibility(out, cameras, eps_z, min_facing)
    return out


# ---------------------------------------------------------------------------
# Primitive builders

def icosahedron(radius: float = 1.0) -> TriMesh:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts *= radius / np.linalg.norm(verts[0])
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return TriMesh(verts, faces)


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Icosahedron with `subdivisions` rounds of midpoint subdivision, reprojected."""
    mesh = icosahedron(radius)
    verts = [v for v in mesh.vertices]
    faces = mesh.faces
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = verts[a] + verts[b]
                p *= radius / np.linalg.norm(p)
                cache[key] = len(verts)
                verts.append(p)
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = np.array(new_faces, dtype=np.int64)
    v = np.array(verts) + np.asarray(center, dtype=np.float64)
    return TriMesh(v, faces)
