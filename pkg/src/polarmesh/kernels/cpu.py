"""Vectorized numpy implementations of the full-evaluation kernels.

Used as the fallback path when numba is disabled, and as the comparison
side of the backend benchmark. Gradient kernels have no vectorized
counterpart (their locality pattern resists batching) and fall back to
the uncompiled loop versions in _impl.
"""

import numpy as np

ETA_OFFSETS = np.array([-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0]) * np.pi


def eta_array(alpha, phi):
    d = np.asarray(alpha)[..., None] - np.asarray(phi)[..., None] + ETA_OFFSETS
    return np.abs(d).min(axis=-1)


def sh_shade_array(normals, basis):
    """Shading for normals (.., 3) against SH basis rows (.., 9)."""
    nx, ny, nz = normals[..., 0], normals[..., 1], normals[..., 2]
    b = basis
    return (b[..., 0] + b[..., 1] * ny + b[..., 2] * nz + b[..., 3] * nx
            + b[..., 4] * nx * ny + b[..., 5] * ny * nz
            + b[..., 6] * (nz ** 2 - 1.0 / 3.0)
            + b[..., 7] * nx * nz + b[..., 8] * (nx ** 2 - ny ** 2))


def face_normals(verts, faces):
    e1 = verts[faces[:, 1]] - verts[faces[:, 0]]
    e2 = verts[faces[:, 2]] - verts[faces[:, 0]]
    n = np.cross(e1, e2)
    norm = np.linalg.norm(n, axis=1)
    out = np.zeros_like(n)
    ok = norm >= 1e-300
    out[ok] = n[ok] / norm[ok, None]
    return out


def vertex_normals(verts, faces, vf_indptr, vf_idx):
    fn = face_normals(verts, faces)
    m = verts.shape[0]
    acc = np.zeros((m, 3))
    counts = np.diff(vf_indptr)
    owner = np.repeat(np.arange(m), counts)
    np.add.at(acc, owner, fn[vf_idx])
    norm = np.linalg.norm(acc, axis=1)
    ok = norm >= 1e-300
    acc[ok] /= norm[ok, None]
    acc[~ok] = 0.0
    return acc


def data_cost(verts, vn, albedo, illum,
              vis_indptr, vis_cam,
              cam_R, cam_t, cam_f, cam_c, cam_wh,
              rgbmin, samp_aop, samp_dop, k, use_dop_weight):
    m = verts.shape[0]
    counts = np.diff(vis_indptr)
    vert_of = np.repeat(np.arange(m), counts)
    cams = vis_cam
    if len(vert_of) == 0:
        return 0.0, 0.0, 0, 0
    p_cam = np.einsum("sij,sj->si", cam_R[cams], verts[vert_of]) + cam_t[cams]
    z = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = cam_f[cams, 0] * p_cam[:, 0] / z + cam_c[cams, 0]
        py = cam_f[cams, 1] * p_cam[:, 1] / z + cam_c[cams, 1]
    w = cam_wh[cams, 0]
    h = cam_wh[cams, 1]
    in_front = z > 0
    inside = in_front & (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)
    dropped = int((~inside).sum())
    # clamp to the image rectangle: off-image projections are charged
    # against the (background) border pixels
    px = np.clip(np.where(in_front, px, 0.0), 0.0, w - 1)
    py = np.clip(np.where(in_front, py, 0.0), 0.0, h - 1)

    x0 = np.minimum(px.astype(np.int64), w - 2)
    y0 = np.minimum(py.astype(np.int64), h - 2)
    fx = px - x0
    fy = py - y0
    obs = ((1 - fx)[:, None] * (1 - fy)[:, None] * rgbmin[cams, y0, x0]
           + fx[:, None] * (1 - fy)[:, None] * rgbmin[cams, y0, x0 + 1]
           + (1 - fx)[:, None] * fy[:, None] * rgbmin[cams, y0 + 1, x0]
           + fx[:, None] * fy[:, None] * rgbmin[cams, y0 + 1, x0 + 1])
    obs = np.where(in_front[:, None], obs, 0.0)

    S = sh_shade_array(vn[vert_of], illum[cams, :9])
    clamped = int((S < 0).sum())
    S = np.maximum(S, 0.0)
    rendered = albedo[vert_of] * S[:, None] * illum[cams, 9:12]
    res = obs - rendered
    inv = 1.0 / np.maximum(counts, 1)
    inv_of = inv[vert_of]
    e_pho = float(((res ** 2).sum(axis=1) * inv_of).sum())

    rho = np.asarray(samp_dop)
    phi = np.asarray(samp_aop)
    n_cam = np.einsum("sij,sj->si", cam_R[cams], vn[vert_of])
    planar = np.hypot(n_cam[:, 0], n_cam[:, 1])
    pol_ok = in_front & (rho > 0) & np.isfinite(phi) & (planar >= 1e-9)
    alpha = np.arctan2(-n_cam[:, 1], n_cam[:, 0])
    alpha = np.where(alpha < 0, alpha + 2 * np.pi, alpha)
    theta = 1.0 - 4.0 * eta_array(alpha, np.where(pol_ok, phi, 0.0)) / np.pi
    ek = np.exp(-k)
    g = (np.exp(-k * theta) - ek) / (1.0 - ek)
    weight = rho if use_dop_weight else 1.0
    e_pol = float((np.where(pol_ok, weight * g * g, 0.0) * inv_of).sum())
    return e_pho, e_pol, dropped, clamped


def gsm_cost(verts, faces, face_adj, t_exp):
    fn = face_normals(verts, faces)
    ok = (fn != 0).any(axis=1)
    neighbor = np.where(face_adj >= 0, face_adj, 0)
    nb_n = fn[neighbor] * ((face_adj >= 0) & ok[neighbor])[..., None]
    avg = nb_n.sum(axis=1)
    norm = np.linalg.norm(avg, axis=1)
    usable = ok & (norm >= 1e-300)
    avg[usable] /= norm[usable, None]
    d = np.clip((fn * avg).sum(axis=1), -1.0, 1.0)
    vals = (np.arccos(d) / np.pi) ** t_exp
    return float(vals[usable].sum())


def rasterize_depth(verts, faces, R, t, fx, fy, cx, cy, width, height, campos, cull_backfaces):
    depth = np.full((height, width), np.inf)
    p_cam = verts @ R.T + t
    z = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = fx * p_cam[:, 0] / z + cx
        py = fy * p_cam[:, 1] / z + cy
    fn = face_normals(verts, faces)
    centroids = verts[faces].mean(axis=1)
    front = (fn * (centroids - campos)).sum(axis=1) < 0
    for r in range(faces.shape[0]):
        if cull_backfaces and not front[r]:
            continue
        idx = faces[r]
        if (z[idx] <= 1e-12).any():
            continue
        xs, ys, zs = px[idx], py[idx], z[idx]
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if abs(area) < 1e-12:
            continue
        xmin = max(int(np.ceil(xs.min())), 0)
        xmax = min(int(np.floor(xs.max())), width - 1)
        ymin = max(int(np.ceil(ys.min())), 0)
        ymax = min(int(np.floor(ys.max())), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        gx, gy = np.meshgrid(np.arange(xmin, xmax + 1), np.arange(ymin, ymax + 1))
        b0 = ((xs[1] - gx) * (ys[2] - gy) - (xs[2] - gx) * (ys[1] - gy)) / area
        b1 = ((xs[2] - gx) * (ys[0] - gy) - (xs[0] - gx) * (ys[2] - gy)) / area
        b2 = 1.0 - b0 - b1
        inside = (b0 >= -1e-12) & (b1 >= -1e-12) & (b2 >= -1e-12)
        zinv = b0 / zs[0] + b1 / zs[1] + b2 / zs[2]
        inside &= zinv > 0
        zval = np.where(inside, 1.0 / np.where(zinv > 0, zinv, 1.0), np.inf)
        block = depth[ymin:ymax + 1, xmin:xmax + 1]
        np.minimum(block, zval, out=block)
    return depth
