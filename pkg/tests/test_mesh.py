import numpy as np
import pytest

from polarmesh.camera import Camera
from polarmesh.mesh import (
    MeshError,
    TriMesh,
    compute_visibility,
    icosahedron,
    icosphere,
    projected_face_areas,
    sqrt3_subdivide,
)


def _front_camera(focal=100.0, size=64, dist=3.0):
    return Camera(fx=focal, fy=focal, cx=(size - 1) / 2, cy=(size - 1) / 2,
                  width=size, height=size, R=np.eye(3),
                  t=np.array([0.0, 0.0, dist]))


def test_icosahedron_topology():
    m = icosahedron()
    assert m.n_vertices == 12 and m.n_faces == 20
    m.check_manifold()
    assert np.allclose(np.linalg.norm(m.vertices, axis=1), 1.0)


def test_icosphere_counts_and_radius():
    for s, nv in [(0, 12), (1, 42), (2, 162), (3, 642), (4, 2562)]:
        m = icosphere(s, radius=2.0)
        assert m.n_vertices == nv
        assert np.allclose(np.linalg.norm(m.vertices, axis=1), 2.0, atol=1e-12)
        m.check_manifold()


def test_icosphere_center_offset():
    c = np.array([1.0, -2.0, 0.5])
    m = icosphere(1, radius=0.5, center=c)
    assert np.allclose(np.linalg.norm(m.vertices - c, axis=1), 0.5)


def test_face_normals_outward_on_sphere():
    m = icosphere(2)
    fn = m.face_normals()
    centers = m.vertices[m.faces].mean(axis=1)
    assert ((fn * centers).sum(axis=1) > 0).all()
    assert np.allclose(np.linalg.norm(fn, axis=1), 1.0)


def test_vertex_normals_match_sphere_direction():
    m = icosphere(3)
    vn = m.vertex_normals()
    dirs = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    assert ((vn * dirs).sum(axis=1) > 0.99).all()


def test_vertex_normal_is_mean_of_face_normals():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 2]], dtype=float)
    f = np.array([[0, 1, 2], [0, 3, 1]])
    m = TriMesh(v, f)
    expected = m.face_normal(0) + m.face_normal(1)
    expected /= np.linalg.norm(expected)
    assert np.allclose(m.vertex_normal(0), expected)


def test_manifold_rejects_duplicate_directed_edge():
    v = np.zeros((4, 3))
    v[1, 0] = 1
    v[2, 1] = 1
    v[3, 2] = 1
    f = np.array([[0, 1, 2], [0, 1, 3]])  # edge (0,1) used twice same direction
    with pytest.raises(MeshError):
        TriMesh(v, f).check_manifold()


def test_adjacency_csr_consistency():
    m = icosphere(1)
    indptr, idx = m.vertex_neighbors
    # every edge appears in both directions
    for i in range(m.n_vertices):
        for j in idx[indptr[i]:indptr[i + 1]]:
            nbrs = idx[indptr[j]:indptr[j + 1]]
            assert i in nbrs
    # icosphere level 1: valence 5 or 6
    deg = np.diff(indptr)
    assert set(deg.tolist()) <= {5, 6}
    vf_ptr, vf_idx = m.vertex_faces
    assert vf_ptr[-1] == 3 * m.n_faces


def test_visibility_front_camera():
    m = icosphere(2)
    cam = _front_camera(focal=60.0)
    vis = compute_visibility(m, [cam], min_facing=0.0)
    pos = cam.position
    to_cam = pos - m.vertices
    to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)
    facing = (to_cam * m.vertex_normals()).sum(axis=1) > 0
    per_vertex = np.zeros(m.n_vertices, dtype=bool)
    for i in range(m.n_vertices):
        per_vertex[i] = len(vis[i]) > 0
    # no back-facing vertex may be visible
    assert not (per_vertex & ~facing).any()
    # the vertex most directly facing the camera must be visible
    assert per_vertex[np.argmax((to_cam * m.vertex_normals()).sum(axis=1))]
    # most of the geometrically facing cap survives the depth test
    assert 0.5 * facing.mean() < per_vertex.mean() <= facing.mean()


def test_visibility_min_facing_reduces_set():
    m = icosphere(2)
    cam = _front_camera()
    loose = compute_visibility(m, [cam], min_facing=0.0)
    tight = compute_visibility(m, [cam], min_facing=0.5)
    n_loose = sum(len(v) for v in loose)
    n_tight = sum(len(v) for v in tight)
    assert 0 < n_tight < n_loose
    for i in range(m.n_vertices):
        assert set(tight[i]) <= set(loose[i])


def test_visibility_occlusion():
    # small sphere hidden behind a big sphere: nothing on the small one is seen
    big = icosphere(3, radius=1.0)
    cam = _front_camera(dist=4.0)
    behind = -cam.position / np.linalg.norm(cam.position) * 1.5
    small = icosphere(1, radius=0.2, center=behind)
    verts = np.vstack([big.vertices, small.vertices])
    faces = np.vstack([big.faces, small.faces + big.n_vertices])
    m = TriMesh(verts, faces)
    compute_visibility(m, [cam], min_facing=0.0)
    for i in range(big.n_vertices, m.n_vertices):
        assert len(m.visibility[i]) == 0


def test_projected_face_areas_scale():
    m = icosphere(2)
    near = _front_camera(focal=200.0, size=256, dist=3.0)
    far = _front_camera(focal=100.0, size=256, dist=3.0)
    compute_visibility(m, [near], min_facing=0.0)
    a_near = projected_face_areas(m, [near])
    compute_visibility(m, [far], min_facing=0.0)
    a_far = projected_face_areas(m, [far])
    vis_both = (a_near > 0) & (a_far > 0)
    assert vis_both.any()
    ratio = a_near[vis_both] / a_far[vis_both]
    assert np.allclose(ratio, 4.0, rtol=0.05)


def test_sqrt3_subdivision_reaches_area_budget():
    m = icosphere(1)
    cam = _front_camera(focal=160.0, size=128, dist=3.0)
    compute_visibility(m, [cam], min_facing=0.0)
    out = sqrt3_subdivide(m, [cam], max_pixel_area=16.0)
    out.check_manifold()
    assert out.n_faces > m.n_faces
    areas = projected_face_areas(out, [cam])
    assert areas.max() <= 16.0
    # one sqrt(3) step triples the face count; total must be m * 3^k
    k = round(np.log(out.n_faces / m.n_faces) / np.log(3))
    assert out.n_faces == m.n_faces * 3 ** k


def test_sqrt3_subdivision_inherits_attributes():
    m = icosphere(1)
    m.albedo = np.tile(np.array([0.25, 0.5, 0.75]), (m.n_vertices, 1))
    cam = _front_camera()
    compute_visibility(m, [cam], min_facing=0.0)
    out = sqrt3_subdivide(m, [cam], max_pixel_area=8.0)
    assert out.albedo.shape == (out.n_vertices, 3)
    assert np.allclose(out.albedo, [0.25, 0.5, 0.75])
    # every new vertex carries a visibility list
    assert len(out.visibility) == out.n_vertices


def test_bbox_diagonal():
    v = np.array([[0.0, 0, 0], [1, 2, 2], [0.5, 1, 1]])
    f = np.array([[0, 1, 2]])
    assert np.isclose(TriMesh(v, f).bbox_diagonal(), 3.0)
