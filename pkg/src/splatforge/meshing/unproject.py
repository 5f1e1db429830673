"""Texture initialization by unprojecting view renders onto the UV atlas.

Each covered texel maps to a surface point; every view that sees the point
(depth test against the mesh's own depth buffer) votes with a weight of
cos(view angle), and unobserved texels are filled by pull-push inpainting.
"""

from __future__ import annotations

import numpy as np

from ..assets.types import Camera
from ..parallel import parallel_map
from .mesh_raster import render_mesh
from .uv_atlas import rasterize_atlas


def unproject_textures(
    vertices: np.ndarray,
    faces: np.ndarray,
    uvs: np.ndarray,
    views: list,  # (albedo, depth, alpha, ...) tuples from render_fusion_views
    cameras: list[Camera],
    resolution: int = 512,
    chart_id: np.ndarray | None = None,
    depth_tolerance: float = 1.5,
    threads: int = 1,
):
    """Blend view albedo/metallic/roughness maps into atlas textures.

    views entries are (albedo, depth, alpha, material) where material is an
    (H, W, 2) stack of (roughness, metallic), or None for albedo-only.
    Returns dict with albedo (T, T, 3), metallic (T, T), roughness (T, T),
    coverage (T, T) bool of directly observed texels.
    """
    face_map, bary, _ = rasterize_atlas(uvs, resolution, chart_id)
    covered = face_map.reshape(-1) >= 0
    fid = face_map.reshape(-1)[covered]
    lam = bary.reshape(-1, 3)[covered]
    points = np.einsum("nk,nkc->nc", lam, vertices[faces[fid]])
    fn = np.cross(vertices[faces[:, 1]] - vertices[faces[:, 0]],
                  vertices[faces[:, 2]] - vertices[faces[:, 0]])
    fn /= np.maximum(np.linalg.norm(fn, axis=-1, keepdims=True), 1e-300)
    normals = fn[fid]

    n_tex = len(points)
    acc_albedo = np.zeros((n_tex, 3))
    acc_mat = np.zeros((n_tex, 2))
    acc_w = np.zeros(n_tex)

    depth_buffers = parallel_map(
        lambda cam: render_mesh(vertices, faces, cam).depth, cameras, threads)

    for view, cam, zbuf in zip(views, cameras, depth_buffers):
        albedo_img, depth_img, alpha_img = view[0], view[1], view[2]
        material_img = view[3] if len(view) > 3 else None
        w_img, h_img = cam.resolution
        pix, z_fwd = cam.project(points)
        px = np.round(pix[:, 0]).astype(np.int64)
        py = np.round(pix[:, 1]).astype(np.int64)
        ok = (z_fwd > 0) & (px >= 0) & (px < w_img) & (py >= 0) & (py < h_img)
        if not ok.any():
            continue
        lin = py[ok] * w_img + px[ok]
        dist = np.linalg.norm(points[ok] - cam.origin, axis=-1)
        zb = zbuf.reshape(-1)[lin]
        voxel = depth_tolerance * max(
            np.linalg.norm(vertices.max(0) - vertices.min(0)) / 128.0, 1e-6)
        visible = (zb > 0) & (np.abs(dist - zb) < voxel)
        visible &= alpha_img.reshape(-1)[lin] > 0.5
        to_cam = cam.origin - points[ok]
        to_cam /= np.maximum(np.linalg.norm(to_cam, axis=-1, keepdims=True), 1e-300)
        cosw = np.einsum("nc,nc->n", normals[ok], to_cam)
        visible &= cosw > 0.05
        if not visible.any():
            continue
        rows = np.flatnonzero(ok)[visible]
        w_vote = cosw[visible]
        acc_albedo[rows] += w_vote[:, None] * albedo_img.reshape(-1, 3)[lin[visible]]
        if material_img is not None:
            acc_mat[rows] += w_vote[:, None] * material_img.reshape(-1, 2)[lin[visible]]
        acc_w[rows] += w_vote

    observed = acc_w > 1e-9
    albedo_tex = np.zeros((resolution * resolution, 3))
    mat_tex = np.zeros((resolution * resolution, 2))
    obs_mask = np.zeros(resolution * resolution, dtype=bool)
    idx = np.flatnonzero(covered)
    albedo_tex[idx[observed]] = acc_albedo[observed] / acc_w[observed, None]
    mat_tex[idx[observed]] = acc_mat[observed] / acc_w[observed, None]
    obs_mask[idx[observed]] = True

    albedo_tex = pull_push(albedo_tex.reshape(resolution, resolution, 3),
                           obs_mask.reshape(resolution, resolution))
    mat_tex = pull_push(mat_tex.reshape(resolution, resolution, 2),
                        obs_mask.reshape(resolution, resolution))
    return {
        "albedo": np.clip(albedo_tex, 0.0, 1.0),
        "roughness": np.clip(mat_tex[..., 0], 0.0, 1.0),
        "metallic": np.clip(mat_tex[..., 1], 0.0, 1.0),
        "coverage": obs_mask.reshape(resolution, resolution),
    }


def pull_push(image: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Fill invalid texels from a weighted mip pyramid (pull-push inpainting)."""
    img = image.copy()
    w = valid.astype(np.float64)
    levels = [(img * w[..., None], w)]
    while levels[-1][0].shape[0] > 1:
        v, ww = levels[-1]
        h2 = (v.shape[0] + 1) // 2 * 2
        if v.shape[0] % 2:  # pad odd sizes
            v = np.pad(v, ((0, 1), (0, 1), (0, 0)))
            ww = np.pad(ww, ((0, 1), (0, 1)))
        v_d = v.reshape(v.shape[0] // 2, 2, v.shape[1] // 2, 2, -1).sum((1, 3))
        w_d = ww.reshape(ww.shape[0] // 2, 2, ww.shape[1] // 2, 2).sum((1, 3))
        levels.append((v_d, w_d))

    # push: fill holes on each level from the coarser one
    for lev in range(len(levels) - 2, -1, -1):
        v, ww = levels[lev]
        cv, cw = levels[lev + 1]
        coarse = cv / np.maximum(cw[..., None], 1e-12)
        up = np.repeat(np.repeat(coarse, 2, axis=0), 2, axis=1)
        up = up[: v.shape[0], : v.shape[1]]
        up_w = np.repeat(np.repeat((cw > 0).astype(np.float64), 2, axis=0),
                         2, axis=1)[: v.shape[0], : v.shape[1]]
        hole = ww <= 0
        v[hole] = (up * up_w[..., None])[hole]
        ww[hole] = up_w[hole]
        levels[lev] = (v, ww)

    v, ww = levels[0]
    out = v[: image.shape[0], : image.shape[1]]
    ws = ww[: image.shape[0], : image.shape[1]]
    return out / np.maximum(ws[..., None], 1e-12)
