"""Triangle mesh rasterizer with vertex gradients.

Per pixel: nearest covering face (deterministic (pixel, depth, face) order),
perspective-correct barycentrics, ray-distance depth, camera-facing face
normal, and hard coverage. Gradients flow to vertex positions through the
interpolated world point (depth chain) and the face normal (cross-product
chain); visibility and barycentric weights are held fixed, the standard
fixed-topology differentiable-rasterization approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..assets.types import Camera

_MAX_CANDIDATES = 1 << 22


@dataclass
class MeshRender:
    face_id: np.ndarray  # (H, W) int64, -1 where empty
    bary: np.ndarray  # (H, W, 3) perspective-correct
    depth: np.ndarray  # (H, W) ray distance, 0 where empty
    alpha: np.ndarray  # (H, W) hard coverage
    normal: np.ndarray  # (H, W, 3) camera-facing face normals
    point: np.ndarray  # (H, W, 3) interpolated world positions
    camera: Camera
    vertices: np.ndarray
    faces: np.ndarray

    @property
    def shape(self):
        return self.face_id.shape


def render_mesh(vertices: np.ndarray, faces: np.ndarray,
                camera: Camera) -> MeshRender:
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    w, h = camera.resolution
    npix = h * w
    face_id = np.full(npix, -1, dtype=np.int64)
    bary = np.zeros((npix, 3))
    depth = np.zeros(npix)
    point = np.zeros((npix, 3))
    normal_img = np.zeros((npix, 3))

    if len(f):
        pix, z_fwd = camera.project(v)
        tri_pix = pix[f]  # (M, 3, 2)
        tri_z = z_fwd[f]
        vis = np.all(tri_z > camera.near * 0.5, axis=1)
        ids = np.flatnonzero(vis)
        if len(ids):
            lo = np.clip(np.floor(tri_pix[ids].min(axis=1)) , 0, None).astype(np.int64)
            hi = np.ceil(tri_pix[ids].max(axis=1)).astype(np.int64)
            lo[:, 0] = np.clip(lo[:, 0], 0, w - 1)
            lo[:, 1] = np.clip(lo[:, 1], 0, h - 1)
            hi[:, 0] = np.clip(hi[:, 0], 0, w - 1)
            hi[:, 1] = np.clip(hi[:, 1], 0, h - 1)
            ok = np.all(hi >= lo, axis=1)
            ids = ids[ok]
            lo = lo[ok]
            hi = hi[ok]
            cand = _candidates(ids, lo, hi, w)
            if cand is not None:
                cf, lin = cand
                res = _cover(v, f, tri_pix, tri_z, cf, lin, camera, w, h)
                if res is not None:
                    (pix_lin, face_sel, lam, t_sel, pt_sel) = res
                    order = np.lexsort((face_sel, t_sel, pix_lin))
                    pix_lin = pix_lin[order]
                    keep = np.r_[True, pix_lin[1:] != pix_lin[:-1]]
                    sel = order[keep]
                    pl = pix_lin[keep]
                    face_id[pl] = face_sel[sel]
                    bary[pl] = lam[sel]
                    depth[pl] = t_sel[sel]
                    point[pl] = pt_sel[sel]

    covered = face_id >= 0
    if covered.any():
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        fn = fn / np.maximum(np.linalg.norm(fn, axis=-1, keepdims=True), 1e-300)
        rays = camera.pixel_rays().reshape(-1, 3)
        n_pix = fn[face_id[covered]]
        flip = np.where(
            np.einsum("nc,nc->n", n_pix, rays[covered]) > 0, -1.0, 1.0)
        normal_img[covered] = n_pix * flip[:, None]

    return MeshRender(
        face_id=face_id.reshape(h, w), bary=bary.reshape(h, w, 3),
        depth=depth.reshape(h, w), alpha=covered.reshape(h, w).astype(np.float64),
        normal=normal_img.reshape(h, w, 3), point=point.reshape(h, w, 3),
        camera=camera, vertices=v, faces=f,
    )


def _candidates(ids, lo, hi, img_w):
    widths = hi[:, 0] - lo[:, 0] + 1
    heights = hi[:, 1] - lo[:, 1] + 1
    areas = widths * heights
    total = int(areas.sum())
    if total == 0:
        return None
    starts = np.concatenate([[0], np.cumsum(areas)[:-1]])
    face = np.repeat(np.arange(len(ids)), areas)
    within = np.arange(total, dtype=np.int64) - np.repeat(starts, areas)
    rep_w = np.repeat(widths, areas)
    px = np.repeat(lo[:, 0], areas) + within % rep_w
    py = np.repeat(lo[:, 1], areas) + within // rep_w
    return ids[face], py * img_w + px


def _cover(v, f, tri_pix, tri_z, cand_face, cand_lin, camera, w, h):
    pc = np.stack([cand_lin % w, cand_lin // w], axis=-1).astype(np.float64)
    p0 = tri_pix[cand_face, 0]
    p1 = tri_pix[cand_face, 1]
    p2 = tri_pix[cand_face, 2]
    e0 = p1 - p0
    e1 = p2 - p1
    e2 = p0 - p2
    area = e0[:, 0] * (p2 - p0)[:, 1] - e0[:, 1] * (p2 - p0)[:, 0]
    good = np.abs(area) > 1e-12
    w0 = (p1 - pc)[:, 0] * (p2 - pc)[:, 1] - (p1 - pc)[:, 1] * (p2 - pc)[:, 0]
    w1 = (p2 - pc)[:, 0] * (p0 - pc)[:, 1] - (p2 - pc)[:, 1] * (p0 - pc)[:, 0]
    w2 = (p0 - pc)[:, 0] * (p1 - pc)[:, 1] - (p0 - pc)[:, 1] * (p1 - pc)[:, 0]
    s = np.sign(area)
    inside = good & (w0 * s >= 0) & (w1 * s >= 0) & (w2 * s >= 0)
    if not inside.any():
        return None
    cand_face = cand_face[inside]
    cand_lin = cand_lin[inside]
    lam = np.stack([w0[inside], w1[inside], w2[inside]], axis=-1)
    lam /= area[inside][:, None]
    # perspective correction via clip-space depth
    zf = tri_z[cand_face]
    lam_pc = lam / np.maximum(zf, 1e-12)
    lam_pc /= lam_pc.sum(axis=1, keepdims=True)
    pts = np.einsum("nk,nkc->nc", lam_pc, v[f[cand_face]])
    t = np.linalg.norm(pts - camera.origin, axis=-1)
    valid = (t > camera.near) & (t < camera.far)
    if not valid.any():
        return None
    return (cand_lin[valid], cand_face[valid], lam_pc[valid], t[valid],
            pts[valid])


def mesh_backward(render: MeshRender, d_depth=None, d_normal=None) -> np.ndarray:
    """Vertex-position gradients from depth and normal image gradients.

    The depth chain uses the exact ray/plane intersection derivative (the
    rendered depth is t with t = ((v0 - o) . n) / (d . n)), so surface tilt
    is captured; visibility stays fixed.
    """
    v = render.vertices
    f = render.faces
    grad = np.zeros_like(v)
    covered = render.face_id.reshape(-1) >= 0
    if not covered.any():
        return grad
    fid = render.face_id.reshape(-1)[covered]

    if d_depth is not None:
        dd = np.asarray(d_depth, dtype=np.float64).reshape(-1)[covered]
        origin = render.camera.origin
        rays = render.camera.pixel_rays().reshape(-1, 3)[covered]
        tri = v[f[fid]]  # (P, 3, 3)
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        n_raw = np.cross(e1, e2)
        denom = np.einsum("pc,pc->p", rays, n_raw)
        denom = np.where(np.abs(denom) < 1e-14,
                         np.where(denom < 0, -1e-14, 1e-14), denom)
        m_rel = tri[:, 0] - origin
        t = np.einsum("pc,pc->p", m_rel, n_raw) / denom
        delta = t[:, None] * rays - m_rel
        d_v0 = (dd / denom)[:, None] * n_raw
        gn = (-dd / denom)[:, None] * delta
        d_e1 = np.cross(e2, gn)
        d_e2 = np.cross(gn, e1)
        for c in range(3):
            grad[:, c] += np.bincount(f[fid, 0],
                                      weights=(d_v0 - d_e1 - d_e2)[:, c],
                                      minlength=len(v))
            grad[:, c] += np.bincount(f[fid, 1], weights=d_e1[:, c],
                                      minlength=len(v))
            grad[:, c] += np.bincount(f[fid, 2], weights=d_e2[:, c],
                                      minlength=len(v))

    if d_normal is not None:
        dn = np.asarray(d_normal, dtype=np.float64).reshape(-1, 3)[covered]
        rays = render.camera.pixel_rays().reshape(-1, 3)[covered]
        raw = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        raw_n = np.maximum(np.linalg.norm(raw, axis=-1, keepdims=True), 1e-300)
        n_hat = raw / raw_n
        flip = np.where(
            np.einsum("nc,nc->n", n_hat[fid], rays) > 0, -1.0, 1.0)
        dn = dn * flip[:, None]
        # accumulate per-face upstream normal gradients
        d_n_face = np.zeros((len(f), 3))
        for c in range(3):
            d_n_face[:, c] = np.bincount(fid, weights=dn[:, c], minlength=len(f))
        dot = np.einsum("fc,fc->f", d_n_face, n_hat)
        d_raw = (d_n_face - dot[:, None] * n_hat) / raw_n
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        d_e1 = np.cross(e2, d_raw)
        d_e2 = np.cross(d_raw, e1)
        for c in range(3):
            grad[:, c] += np.bincount(f[:, 1], weights=d_e1[:, c], minlength=len(v))
            grad[:, c] += np.bincount(f[:, 2], weights=d_e2[:, c], minlength=len(v))
            grad[:, c] += np.bincount(f[:, 0], weights=-(d_e1 + d_e2)[:, c],
                                      minlength=len(v))
    return grad
