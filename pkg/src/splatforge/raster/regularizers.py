"""2DGS geometry regularizers: depth distortion and normal consistency."""

from __future__ import annotations

import numpy as np

from ..errors import RasterError
from .backward import (
    RenderGradients,
    _segment_cumsum_excl,
    _segment_suffix_excl,
    composite_geometry_backward,
    rasterize_backward,
)
from .forward import RenderOutput


def depth_distortion(output: RenderOutput, with_grads: bool = True):
    """Per-ray sum_{i,j} w_i w_j |z_i - z_j|, averaged over covered pixels.

    Encourages each ray's blend weights to concentrate at a single depth.
    Returns (value, RenderGradients or None); gradients flow through both the
    fragment depths and the blend weights.
    """
    rec = output.fragments
    if rec is None:
        raise RasterError("depth_distortion requires a fragment record")
    n_fg = int(np.count_nonzero(output.alpha > 0.0))
    if rec.count == 0 or n_fg == 0:
        return 0.0, (RenderGradients.zeros(rec.scene.count if rec else 0)
                     if with_grads else None)

    w = rec.weight
    z = rec.t
    w_excl = _segment_cumsum_excl(w, rec.starts, rec.seg_len)
    wz_excl = _segment_cumsum_excl(w * z, rec.starts, rec.seg_len)
    # fragments are depth-sorted, so |z_j - z_k| over j<k telescopes into
    # prefix sums: D = 2 sum_k w_k (z_k W_<k - (wz)_<k)
    per_frag = w * (z * w_excl - wz_excl)
    value = 2.0 * float(per_frag.sum()) / n_fg
    if not with_grads:
        return value, None

    w_suf = _segment_suffix_excl(w, rec.starts, rec.seg_len)
    wz_suf = _segment_suffix_excl(w * z, rec.starts, rec.seg_len)
    dldw = 2.0 * (z * w_excl - wz_excl + wz_suf - z * w_suf) / n_fg
    dldt = 2.0 * w * (w_excl - w_suf) / n_fg
    grads = composite_geometry_backward(rec, dldw, dldt)
    return value, grads


def _oriented_depth_normals(output: RenderOutput):
    """Normals from central differences of backprojected depth, camera facing."""
    h, w = output.shape
    rays = output.camera.pixel_rays()
    depth = output.depth
    points = output.camera.origin + rays * depth[..., None]

    dx = np.zeros((h, w, 3))
    dy = np.zeros((h, w, 3))
    dx[:, 1:-1] = 0.5 * (points[:, 2:] - points[:, :-2])
    dy[1:-1, :] = 0.5 * (points[2:, :] - points[:-2, :])
    raw = np.cross(dx, dy)
    facing = np.einsum("hwc,hwc->hw", raw, rays)
    sign = np.where(facing > 0.0, -1.0, 1.0)
    raw = raw * sign[..., None]
    norm = np.linalg.norm(raw, axis=-1)
    return points, rays, dx, dy, raw, norm


def normal_consistency_image_grads(output: RenderOutput):
    """Value plus gradient images (normal, depth channels) for fused backprop."""
    h, w = output.shape
    alpha_fg = output.alpha > 0.5
    fg = alpha_fg.copy()
    fg[:, :2] = fg[:, -2:] = fg[:2, :] = fg[-2:, :] = False
    # central differences must not straddle background pixels
    fg[2:, :] &= alpha_fg[:-2, :]
    fg[:-2, :] &= alpha_fg[2:, :]
    fg[:, 2:] &= alpha_fg[:, :-2]
    fg[:, :-2] &= alpha_fg[:, 2:]

    points, rays, dx, dy, raw, raw_norm = _oriented_depth_normals(output)
    n_img = output.normal
    n_img_norm = np.linalg.norm(n_img, axis=-1)
    fg &= (raw_norm > 1e-12) & (n_img_norm > 1e-12)
    count = int(np.count_nonzero(fg))
    if count == 0:
        return 0.0, {}

    n_hat = np.where(fg[..., None], n_img / np.maximum(n_img_norm, 1e-300)[..., None], 0.0)
    m_hat = np.where(fg[..., None], raw / np.maximum(raw_norm, 1e-300)[..., None], 0.0)
    dots = np.einsum("hwc,hwc->hw", n_hat, m_hat)
    value = float(np.sum(np.where(fg, 1.0 - dots, 0.0))) / count

    # d/dN of (1 - N^ . m): project out the parallel component, then scale
    d_n_img = np.where(
        fg[..., None],
        -(m_hat - dots[..., None] * n_hat) / np.maximum(n_img_norm, 1e-300)[..., None],
        0.0,
    ) / count
    g_raw = np.where(
        fg[..., None],
        -(n_hat - dots[..., None] * m_hat) / np.maximum(raw_norm, 1e-300)[..., None],
        0.0,
    ) / count

    # raw = sign * cross(dx, dy); sign folded into g_raw is constant
    facing = np.einsum("hwc,hwc->hw", np.cross(dx, dy), rays)
    sign = np.where(facing > 0.0, -1.0, 1.0)
    g_raw = g_raw * sign[..., None]
    d_dx = np.cross(dy, g_raw)
    d_dy = np.cross(g_raw, dx)

    d_points = np.zeros_like(points)
    d_points[:, 2:] += 0.5 * d_dx[:, 1:-1]
    d_points[:, :-2] -= 0.5 * d_dx[:, 1:-1]
    d_points[2:, :] += 0.5 * d_dy[1:-1, :]
    d_points[:-2, :] -= 0.5 * d_dy[1:-1, :]
    d_depth = np.einsum("hwc,hwc->hw", d_points, rays)
    return value, {"normal": d_n_img, "depth": d_depth}


def normal_consistency(output: RenderOutput, with_grads: bool = True):
    """Mean foreground misalignment between splat normals and depth normals.

    Returns (value, RenderGradients or None). The depth-derived normal uses
    central differences of the backprojected depth map; pixels whose stencil
    touches background are excluded. Empty foreground gives exactly 0.
    """
    if output.fragments is None:
        raise RasterError("normal_consistency requires a fragment record")
    value, img_grads = normal_consistency_image_grads(output)
    if not with_grads:
        return value, None
    if not img_grads:
        return value, RenderGradients.zeros(output.fragments.scene.count)
    return value, rasterize_backward(output, img_grads)
