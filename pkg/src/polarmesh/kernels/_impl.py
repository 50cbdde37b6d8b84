"""Scalar loop kernels: cost terms, sparse numeric gradients, rasterization.

These are the hot inner loops of refinement. Every function here is plain
nopython-compatible Python; the @kernel decorator compiles them with numba
unless POLARMESH_DISABLE_NUMBA is set, in which case they run uncompiled
(the vectorized fallbacks in cpu.py cover the full-evaluation paths).

Gradients are central differences. During a probe the image observations
attached to each (vertex, camera) sample are frozen at the base state:
the RGB sample extends its base bilinear cell and AoP/DoP keep their base
nearest-neighbor values. This keeps the differentiated function smooth
across pixel boundaries; the line search always re-evaluates the true
cost, so descent is still measured against the real objective.
"""

import math

import numpy as np

from ._dispatch import kernel

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi


@kernel
def eta_scalar(alpha, phi):
    """Smallest distance from azimuth alpha to the four AoP candidates."""
    d = alpha - phi
    best = abs(d - TWO_PI)
    for off in (-1.5 * math.pi, -math.pi, -HALF_PI, 0.0, HALF_PI, math.pi):
        v = abs(d + off)
        if v < best:
            best = v
    return best


@kernel
def _sh_shade(nx, ny, nz, L, off):
    return (L[off] + L[off + 1] * ny + L[off + 2] * nz + L[off + 3] * nx
            + L[off + 4] * nx * ny + L[off + 5] * ny * nz
            + L[off + 6] * (nz * nz - 1.0 / 3.0)
            + L[off + 7] * nx * nz + L[off + 8] * (nx * nx - ny * ny))


@kernel
def _face_normal(verts, faces, r):
    i0 = faces[r, 0]
    i1 = faces[r, 1]
    i2 = faces[r, 2]
    ax = verts[i1, 0] - verts[i0, 0]
    ay = verts[i1, 1] - verts[i0, 1]
    az = verts[i1, 2] - verts[i0, 2]
    bx = verts[i2, 0] - verts[i0, 0]
    by = verts[i2, 1] - verts[i0, 1]
    bz = verts[i2, 2] - verts[i0, 2]
    cx = ay * bz - az * by
    cy = az * bx - ax * bz
    cz = ax * by - ay * bx
    n = math.sqrt(cx * cx + cy * cy + cz * cz)
    if n < 1e-300:
        return 0.0, 0.0, 0.0
    return cx / n, cy / n, cz / n


@kernel
def _vertex_normal(verts, faces, vf_indptr, vf_idx, v):
    sx = 0.0
    sy = 0.0
    sz = 0.0
    for p in range(vf_indptr[v], vf_indptr[v + 1]):
        fx, fy, fz = _face_normal(verts, faces, vf_idx[p])
        sx += fx
        sy += fy
        sz += fz
    n = math.sqrt(sx * sx + sy * sy + sz * sz)
    if n < 1e-300:
        return 0.0, 0.0, 0.0
    return sx / n, sy / n, sz / n


@kernel
def face_normals(verts, faces):
    out = np.zeros((faces.shape[0], 3))
    for r in range(faces.shape[0]):
        nx, ny, nz = _face_normal(verts, faces, r)
        out[r, 0] = nx
        out[r, 1] = ny
        out[r, 2] = nz
    return out


@kernel
def vertex_normals(verts, faces, vf_indptr, vf_idx):
    m = verts.shape[0]
    out = np.zeros((m, 3))
    for v in range(m):
        nx, ny, nz = _vertex_normal(verts, faces, vf_indptr, vf_idx, v)
        out[v, 0] = nx
        out[v, 1] = ny
        out[v, 2] = nz
    return out


@kernel
def _pol_sample(nx, ny, nz, cam_R, c, phi, rho, k, ek, use_dop_weight):
    """Polarimetric contribution of one (vertex, camera) sample; -1 if skipped."""
    ncx = cam_R[c, 0, 0] * nx + cam_R[c, 0, 1] * ny + cam_R[c, 0, 2] * nz
    ncy = cam_R[c, 1, 0] * nx + cam_R[c, 1, 1] * ny + cam_R[c, 1, 2] * nz
    if math.sqrt(ncx * ncx + ncy * ncy) < 1e-9:
        return -1.0
    alpha = math.atan2(-ncy, ncx)
    if alpha < 0.0:
        alpha += TWO_PI
    theta = 1.0 - 4.0 * eta_scalar(alpha, phi) / math.pi
    g = (math.exp(-k * theta) - ek) / (1.0 - ek)
    if use_dop_weight:
        return rho * g * g
    return g * g


@kernel
def data_cost(verts, vn, albedo, illum,
              vis_indptr, vis_cam,
              cam_R, cam_t, cam_f, cam_c, cam_wh,
              rgbmin, samp_aop, samp_dop, k, use_dop_weight):
    """Full photometric + polarimetric data terms.

    AoP/DoP come in as per-sample arrays (the caller decides whether
    they were sampled at the current projections or frozen at stage
    start). Photometric observations are sampled bilinearly at the
    current projection, clamped to the image rectangle: a projection
    that wanders off the image keeps being charged against the border
    pixels, so shedding observations can never lower the cost. Returns
    (e_pho, e_pol, n_dropped, n_clamped); dropped counts samples whose
    projection left the image or fell behind the camera.
    """
    m = verts.shape[0]
    e_pho = 0.0
    e_pol = 0.0
    dropped = 0
    clamped = 0
    ek = math.exp(-k)
    for i in range(m):
        lo = vis_indptr[i]
        hi = vis_indptr[i + 1]
        if hi == lo:
            continue
        inv = 1.0 / (hi - lo)
        nx = vn[i, 0]
        ny = vn[i, 1]
        nz = vn[i, 2]
        for s in range(lo, hi):
            c = vis_cam[s]
            S = _sh_shade(nx, ny, nz, illum[c], 0)
            if S < 0.0:
                S = 0.0
                clamped += 1
            pcx = cam_R[c, 0, 0] * verts[i, 0] + cam_R[c, 0, 1] * verts[i, 1] + cam_R[c, 0, 2] * verts[i, 2] + cam_t[c, 0]
            pcy = cam_R[c, 1, 0] * verts[i, 0] + cam_R[c, 1, 1] * verts[i, 1] + cam_R[c, 1, 2] * verts[i, 2] + cam_t[c, 1]
            pcz = cam_R[c, 2, 0] * verts[i, 0] + cam_R[c, 2, 1] * verts[i, 1] + cam_R[c, 2, 2] * verts[i, 2] + cam_t[c, 2]
            if pcz <= 0.0:
                # behind the camera: no observation to explain the render
                dropped += 1
                acc = 0.0
                for ch in range(3):
                    d = albedo[i, ch] * S * illum[c, 9 + ch]
                    acc += d * d
                e_pho += acc * inv
                continue
            px = cam_f[c, 0] * pcx / pcz + cam_c[c, 0]
            py = cam_f[c, 1] * pcy / pcz + cam_c[c, 1]
            w = cam_wh[c, 0]
            h = cam_wh[c, 1]
            if px < 0.0 or px > w - 1 or py < 0.0 or py > h - 1:
                dropped += 1
                if px < 0.0:
                    px = 0.0
                elif px > w - 1:
                    px = float(w - 1)
                if py < 0.0:
                    py = 0.0
                elif py > h - 1:
                    py = float(h - 1)
            x0 = int(px)
            if x0 > w - 2:
                x0 = w - 2
            y0 = int(py)
            if y0 > h - 2:
                y0 = h - 2
            fx = px - x0
            fy = py - y0
            acc = 0.0
            for ch in range(3):
                obs = ((1.0 - fx) * (1.0 - fy) * rgbmin[c, y0, x0, ch]
                       + fx * (1.0 - fy) * rgbmin[c, y0, x0 + 1, ch]
                       + (1.0 - fx) * fy * rgbmin[c, y0 + 1, x0, ch]
                       + fx * fy * rgbmin[c, y0 + 1, x0 + 1, ch])
                d = obs - albedo[i, ch] * S * illum[c, 9 + ch]
                acc += d * d
            e_pho += acc * inv

            rho = samp_dop[s]
            phi = samp_aop[s]
            if rho > 0.0 and math.isfinite(phi):
                contrib = _pol_sample(nx, ny, nz, cam_R, c, phi, rho, k, ek, use_dop_weight)
                if contrib >= 0.0:
                    e_pol += contrib * inv
    return e_pho, e_pol, dropped, clamped


@kernel
def _gsm_face(verts, faces, face_adj, r, t_exp):
    nx, ny, nz = _face_normal(verts, faces, r)
    if nx == 0.0 and ny == 0.0 and nz == 0.0:
        return 0.0
    sx = 0.0
    sy = 0.0
    sz = 0.0
    cnt = 0
    for e in range(3):
        q = face_adj[r, e]
        if q < 0:
            continue
        qx, qy, qz = _face_normal(verts, faces, q)
        if qx == 0.0 and qy == 0.0 and qz == 0.0:
            continue
        sx += qx
        sy += qy
        sz += qz
        cnt += 1
    if cnt == 0:
        return 0.0
    n = math.sqrt(sx * sx + sy * sy + sz * sz)
    if n < 1e-300:
        return 0.0
    d = (nx * sx + ny * sy + nz * sz) / n
    if d > 1.0:
        d = 1.0
    elif d < -1.0:
        d = -1.0
    return (math.acos(d) / math.pi) ** t_exp


@kernel
def gsm_cost(verts, faces, face_adj, t_exp):
    total = 0.0
    for r in range(faces.shape[0]):
        total += _gsm_face(verts, faces, face_adj, r, t_exp)
    return total


@kernel
def _vertex_data_local(j, moving, verts, faces, albedo, illum,
                       vis_indptr, vis_cam,
                       samp_valid, samp_obs, samp_cellx, samp_celly, samp_corners,
                       samp_aop, samp_dop,
                       vf_indptr, vf_idx,
                       cam_R, cam_t, cam_f, cam_c,
                       k, ek, tau1, use_dop_weight):
    """pho + tau1*pol contribution of vertex j while vertex `moving` is perturbed."""
    lo = vis_indptr[j]
    hi = vis_indptr[j + 1]
    if hi == lo:
        return 0.0
    inv = 1.0 / (hi - lo)
    nx, ny, nz = _vertex_normal(verts, faces, vf_indptr, vf_idx, j)
    pho = 0.0
    pol = 0.0
    for s in range(lo, hi):
        if samp_valid[s] == 0:
            continue
        c = vis_cam[s]
        S = _sh_shade(nx, ny, nz, illum[c], 0)
        if S < 0.0:
            S = 0.0
        if j == moving:
            pcx = cam_R[c, 0, 0] * verts[j, 0] + cam_R[c, 0, 1] * verts[j, 1] + cam_R[c, 0, 2] * verts[j, 2] + cam_t[c, 0]
            pcy = cam_R[c, 1, 0] * verts[j, 0] + cam_R[c, 1, 1] * verts[j, 1] + cam_R[c, 1, 2] * verts[j, 2] + cam_t[c, 1]
            pcz = cam_R[c, 2, 0] * verts[j, 0] + cam_R[c, 2, 1] * verts[j, 1] + cam_R[c, 2, 2] * verts[j, 2] + cam_t[c, 2]
            if pcz <= 0.0:
                continue
            px = cam_f[c, 0] * pcx / pcz + cam_c[c, 0]
            py = cam_f[c, 1] * pcy / pcz + cam_c[c, 1]
            fx = px - samp_cellx[s]
            fy = py - samp_celly[s]
            acc = 0.0
            for ch in range(3):
                obs = ((1.0 - fx) * (1.0 - fy) * samp_corners[s, 0, ch]
                       + fx * (1.0 - fy) * samp_corners[s, 1, ch]
                       + (1.0 - fx) * fy * samp_corners[s, 2, ch]
                       + fx * fy * samp_corners[s, 3, ch])
                d = obs - albedo[j, ch] * S * illum[c, 9 + ch]
                acc += d * d
            pho += acc * inv
        else:
            acc = 0.0
            for ch in range(3):
                d = samp_obs[s, ch] - albedo[j, ch] * S * illum[c, 9 + ch]
                acc += d * d
            pho += acc * inv
        rho = samp_dop[s]
        phi = samp_aop[s]
        if rho > 0.0 and math.isfinite(phi):
            contrib = _pol_sample(nx, ny, nz, cam_R, c, phi, rho, k, ek, use_dop_weight)
            if contrib >= 0.0:
                pol += contrib * inv
    return pho + tau1 * pol


@kernel
def _local_cost_pos(i, verts, faces, albedo, illum,
                    vis_indptr, vis_cam,
                    samp_valid, samp_obs, samp_cellx, samp_celly, samp_corners,
                    samp_aop, samp_dop,
                    vf_indptr, vf_idx, vv_indptr, vv_idx,
                    aff_indptr, aff_idx, face_adj,
                    cam_R, cam_t, cam_f, cam_c,
                    k, ek, tau1, tau2, t_exp, use_dop_weight):
    total = _vertex_data_local(i, i, verts, faces, albedo, illum,
                               vis_indptr, vis_cam,
                               samp_valid, samp_obs, samp_cellx, samp_celly, samp_corners,
                               samp_aop, samp_dop, vf_indptr, vf_idx,
                               cam_R, cam_t, cam_f, cam_c, k, ek, tau1, use_dop_weight)
    for p in range(vv_indptr[i], vv_indptr[i + 1]):
        j = vv_idx[p]
        total += _vertex_data_local(j, i, verts, faces, albedo, illum,
                                    vis_indptr, vis_cam,
                                    samp_valid, samp_obs, samp_cellx, samp_celly, samp_corners,
                                    samp_aop, samp_dop, vf_indptr, vf_idx,
                                    cam_R, cam_t, cam_f, cam_c, k, ek, tau1, use_dop_weight)
    if tau2 != 0.0:
        acc = 0.0
        for p in range(aff_indptr[i], aff_indptr[i + 1]):
            acc += _gsm_face(verts, faces, face_adj, aff_idx[p], t_exp)
        total += tau2 * acc
    return total


@kernel
def grad_position(verts, faces, albedo, illum,
                  vis_indptr, vis_cam,
                  samp_valid, samp_obs, samp_cellx, samp_celly, samp_corners,
                  samp_aop, samp_dop,
                  vf_indptr, vf_idx, vv_indptr, vv_idx,
                  aff_indptr, aff_idx, face_adj,
                  cam_R, cam_t, cam_f, cam_c,
                  k, tau1, tau2, t_exp, use_dop_weight,
                  eps_r, step_floor):
    m = verts.shape[0]
    grad = np.zeros((m, 3))
    ek = math.exp(-k)
    for i in range(m):
        for ax in range(3):
            x0 = verts[i, ax]
            h = eps_r * max(abs(x0), step_floor)
            verts[i, ax] = x0 + h
            cp = _local_cost_pos(i, verts, faces, albedo, illum, vis_indptr, vis_cam,
                                 samp_valid, samp_obs, samp_cellx, samp_celly, samp_corners,
                                 samp_aop, samp_dop, vf_indptr, vf_idx, vv_indptr, vv_idx,
                                 aff_indptr, aff_idx, face_adj, cam_R, cam_t, cam_f, cam_c,
                                 k, ek, tau1, tau2, t_exp, use_dop_weight)
            verts[i, ax] = x0 - h
            cm = _local_cost_pos(i, verts, faces, albedo, illum, vis_indptr, vis_cam,
                                 samp_valid, samp_obs, samp_cellx, samp_celly, samp_corners,
                                 samp_aop, samp_dop, vf_indptr, vf_idx, vv_indptr, vv_idx,
                                 aff_indptr, aff_idx, face_adj, cam_R, cam_t, cam_f, cam_c,
                                 k, ek, tau1, tau2, t_exp, use_dop_weight)
            verts[i, ax] = x0
            grad[i, ax] = (cp - cm) / (2.0 * h)
    return grad


@kernel
def _local_cost_albedo(i, vn, albedo, illum, vis_indptr, vis_cam,
                       samp_valid, samp_obs,
                       vv_indptr, vv_idx, w_psm, tau3):
    lo = vis_indptr[i]
    hi = vis_indptr[i + 1]
    pho = 0.0
    if hi > lo:
        inv = 1.0 / (hi - lo)
        for s in range(lo, hi):
            if samp_valid[s] == 0:
                continue
            c = vis_cam[s]
            S = _sh_shade(vn[i, 0], vn[i, 1], vn[i, 2], illum[c], 0)
            if S < 0.0:
                S = 0.0
            acc = 0.0
            for ch in range(3):
                d = samp_obs[s, ch] - albedo[i, ch] * S * illum[c, 9 + ch]
                acc += d * d
            pho += acc * inv
    psm = 0.0
    for p in range(vv_indptr[i], vv_indptr[i + 1]):
        j = vv_idx[p]
        acc = 0.0
        for ch in range(3):
            d = albedo[i, ch] - albedo[j, ch]
            acc += d * d
        # w is symmetric; both orderings of the pair appear in the double sum
        psm += 2.0 * w_psm[p] * acc
    return pho + tau3 * psm


@kernel
def grad_albedo(vn, albedo, illum, vis_indptr, vis_cam,
                samp_valid, samp_obs,
                vv_indptr, vv_idx, w_psm, tau3, eps_r, step_floor):
    m = albedo.shape[0]
    grad = np.zeros((m, 3))
    for i in range(m):
        for ch in range(3):
            a0 = albedo[i, ch]
            h = eps_r * max(abs(a0), step_floor)
            albedo[i, ch] = a0 + h
            cp = _local_cost_albedo(i, vn, albedo, illum, vis_indptr, vis_cam,
                                    samp_valid, samp_obs, vv_indptr, vv_idx, w_psm, tau3)
            albedo[i, ch] = a0 - h
            cm = _local_cost_albedo(i, vn, albedo, illum, vis_indptr, vis_cam,
                                    samp_valid, samp_obs, vv_indptr, vv_idx, w_psm, tau3)
            albedo[i, ch] = a0
            grad[i, ch] = (cp - cm) / (2.0 * h)
    return grad


@kernel
def _camera_pho(c, vn, albedo, illum, cam_samp_indptr, cam_samp_sidx,
                samp_valid, samp_obs, samp_vert, inv_nvis):
    acc = 0.0
    for q in range(cam_samp_indptr[c], cam_samp_indptr[c + 1]):
        s = cam_samp_sidx[q]
        if samp_valid[s] == 0:
            continue
        i = samp_vert[s]
        S = _sh_shade(vn[i, 0], vn[i, 1], vn[i, 2], illum[c], 0)
        if S < 0.0:
            S = 0.0
        r = 0.0
        for ch in range(3):
            d = samp_obs[s, ch] - albedo[i, ch] * S * illum[c, 9 + ch]
            r += d * d
        acc += r * inv_nvis[i]
    return acc


@kernel
def grad_illum(vn, albedo, illum, cam_samp_indptr, cam_samp_sidx,
               samp_valid, samp_obs, samp_vert, inv_nvis, eps_r, step_floor):
    n = illum.shape[0]
    grad = np.zeros((n, 12))
    for c in range(n):
        for p in range(12):
            l0 = illum[c, p]
            h = eps_r * max(abs(l0), step_floor)
            illum[c, p] = l0 + h
            cp = _camera_pho(c, vn, albedo, illum, cam_samp_indptr, cam_samp_sidx,
                             samp_valid, samp_obs, samp_vert, inv_nvis)
            illum[c, p] = l0 - h
            cm = _camera_pho(c, vn, albedo, illum, cam_samp_indptr, cam_samp_sidx,
                             samp_valid, samp_obs, samp_vert, inv_nvis)
            illum[c, p] = l0
            grad[c, p] = (cp - cm) / (2.0 * h)
    return grad


@kernel
def rasterize_depth(verts, faces, R, t, fx, fy, cx, cy, width, height, campos, cull_backfaces):
    """Z-buffer of the mesh for one camera. Perspective-correct 1/z interpolation."""
    depth = np.full((height, width), np.inf)
    for r in range(faces.shape[0]):
        i0 = faces[r, 0]
        i1 = faces[r, 1]
        i2 = faces[r, 2]
        if cull_backfaces:
            nx, ny, nz = _face_normal(verts, faces, r)
            gx = (verts[i0, 0] + verts[i1, 0] + verts[i2, 0]) / 3.0 - campos[0]
            gy = (verts[i0, 1] + verts[i1, 1] + verts[i2, 1]) / 3.0 - campos[1]
            gz = (verts[i0, 2] + verts[i1, 2] + verts[i2, 2]) / 3.0 - campos[2]
            if nx * gx + ny * gy + nz * gz >= 0.0:
                continue
        xs = np.empty(3)
        ys = np.empty(3)
        zs = np.empty(3)
        behind = False
        for e in range(3):
            v = faces[r, e]
            pcx = R[0, 0] * verts[v, 0] + R[0, 1] * verts[v, 1] + R[0, 2] * verts[v, 2] + t[0]
            pcy = R[1, 0] * verts[v, 0] + R[1, 1] * verts[v, 1] + R[1, 2] * verts[v, 2] + t[1]
            pcz = R[2, 0] * verts[v, 0] + R[2, 1] * verts[v, 1] + R[2, 2] * verts[v, 2] + t[2]
            if pcz <= 1e-12:
                behind = True
                break
            xs[e] = fx * pcx / pcz + cx
            ys[e] = fy * pcy / pcz + cy
            zs[e] = pcz
        if behind:
            continue
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if abs(area) < 1e-12:
            continue
        xmin = max(int(math.ceil(min(xs[0], xs[1], xs[2]))), 0)
        xmax = min(int(math.floor(max(xs[0], xs[1], xs[2]))), width - 1)
        ymin = max(int(math.ceil(min(ys[0], ys[1], ys[2]))), 0)
        ymax = min(int(math.floor(max(ys[0], ys[1], ys[2]))), height - 1)
        for pyi in range(ymin, ymax + 1):
            for pxi in range(xmin, xmax + 1):
                b0 = ((xs[1] - pxi) * (ys[2] - pyi) - (xs[2] - pxi) * (ys[1] - pyi)) / area
                b1 = ((xs[2] - pxi) * (ys[0] - pyi) - (xs[0] - pxi) * (ys[2] - pyi)) / area
                b2 = 1.0 - b0 - b1
                if b0 < -1e-12 or b1 < -1e-12 or b2 < -1e-12:
                    continue
                zinv = b0 / zs[0] + b1 / zs[1] + b2 / zs[2]
                if zinv <= 0.0:
                    continue
                z = 1.0 / zinv
                if z < depth[pyi, pxi]:
                    depth[pyi, pxi] = z
    return depth


@kernel
def raycast_mesh(origin, dirs, verts, faces):
    """Moller-Trumbore closest hit. Returns (t, face index) per ray; t=inf on miss."""
    n_rays = dirs.shape[0]
    t_best = np.full(n_rays, np.inf)
    f_best = np.full(n_rays, -1, dtype=np.int64)
    for r in range(faces.shape[0]):
        i0 = faces[r, 0]
        i1 = faces[r, 1]
        i2 = faces[r, 2]
        e1x = verts[i1, 0] - verts[i0, 0]
        e1y = verts[i1, 1] - verts[i0, 1]
        e1z = verts[i1, 2] - verts[i0, 2]
        e2x = verts[i2, 0] - verts[i0, 0]
        e2y = verts[i2, 1] - verts[i0, 1]
        e2z = verts[i2, 2] - verts[i0, 2]
        for q in range(n_rays):
            dx = dirs[q, 0]
            dy = dirs[q, 1]
            dz = dirs[q, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if abs(det) < 1e-14:
                continue
            inv = 1.0 / det
            tx = origin[0] - verts[i0, 0]
            ty = origin[1] - verts[i0, 1]
            tz = origin[2] - verts[i0, 2]
            u = (tx * px + ty * py + tz * pz) * inv
            if u < -1e-12 or u > 1.0 + 1e-12:
                continue
            qx = ty * e1z - tz * e1y
            qy = tz * e1x - tx * e1z
            qz = tx * e1y - ty * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < -1e-12 or u + v > 1.0 + 1e-12:
                continue
            th = (e2x * qx + e2y * qy + e2z * qz) * inv
            if th > 1e-9 and th < t_best[q]:
                t_best[q] = th
                f_best[q] = r
    return t_best, f_best
