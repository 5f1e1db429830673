"""Reverse-mode gradients for the splat rasterizer.

The backward pass replays the recorded fragment list: upstream image gradients
are first pulled onto per-fragment blend weights, then chained through the
front-to-back compositing recurrence, the Gaussian falloff, and the exact
ray/plane intersection down to every primitive attribute. Early-stop and
cutoff indicators are treated as constants (they change on a measure-zero
set); all other partials are analytic and match central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import RasterError
from .forward import (
    FragmentRecord,
    Q_CLAMP,
    RenderOutput,
    gaussian_weight,
    stop_factor,
)


def _scatter(dest: np.ndarray, idx: np.ndarray, values: np.ndarray) -> None:
    """Deterministic accumulate-by-index (bincount per column)."""
    n = len(dest)
    if values.ndim == 1:
        dest += np.bincount(idx, weights=values, minlength=n)
    else:
        for c in range(values.shape[1]):
            dest[:, c] += np.bincount(idx, weights=values[:, c], minlength=n)

_GRAD_KEYS = ("rgb", "albedo", "alpha", "metallic", "roughness", "depth", "normal")


@dataclass
class RenderGradients:
    """Partials of a scalar loss with respect to every primitive attribute."""

    position: np.ndarray  # (N, 3)
    rotation: np.ndarray  # (N, 3)
    scale: np.ndarray  # (N, 2)
    opacity: np.ndarray  # (N,)
    color: np.ndarray  # (N, 3)
    albedo: np.ndarray  # (N, 3)
    metallic: np.ndarray  # (N,)
    roughness: np.ndarray  # (N,)

    @staticmethod
    def zeros(n: int) -> "RenderGradients":
        return RenderGradients(
            position=np.zeros((n, 3)),
            rotation=np.zeros((n, 3)),
            scale=np.zeros((n, 2)),
            opacity=np.zeros(n),
            color=np.zeros((n, 3)),
            albedo=np.zeros((n, 3)),
            metallic=np.zeros(n),
            roughness=np.zeros(n),
        )

    def add_(self, other: "RenderGradients") -> "RenderGradients":
        for name in ("position", "rotation", "scale", "opacity", "color",
                     "albedo", "metallic", "roughness"):
            getattr(self, name).__iadd__(getattr(other, name))
        return self

    def scaled(self, factor: float) -> "RenderGradients":
        return RenderGradients(
            **{
                name: getattr(self, name) * factor
                for name in ("position", "rotation", "scale", "opacity",
                             "color", "albedo", "metallic", "roughness")
            }
        )


def _segment_cumsum_excl(values: np.ndarray, starts: np.ndarray,
                         seg_len: np.ndarray) -> np.ndarray:
    """Exclusive prefix sums within each segment of a sorted fragment list."""
    if len(values) == 0:
        return values.copy()
    c = np.cumsum(values)
    incl = c - np.repeat(c[starts] - values[starts], seg_len)
    return incl - values


def _segment_suffix_excl(values: np.ndarray, starts: np.ndarray,
                         seg_len: np.ndarray) -> np.ndarray:
    """Exclusive suffix sums within each segment."""
    if len(values) == 0:
        return values.copy()
    excl_prefix = _segment_cumsum_excl(values, starts, seg_len)
    totals = np.add.reduceat(values, starts)
    return np.repeat(totals, seg_len) - excl_prefix - values


def composite_geometry_backward(
    rec: FragmentRecord,
    dldw: np.ndarray,
    dldt: np.ndarray,
    d_normal_frag: np.ndarray | None = None,
) -> RenderGradients:
    """Chain per-fragment weight/depth/normal grads into primitive attributes.

    dldw and dldt are per-fragment partials of the loss w.r.t. the blend
    weight and the intersection ray distance; d_normal_frag (F, 3) is the
    partial w.r.t. the camera-facing splat normal at that fragment.
    """
    scene = rec.scene
    grads = RenderGradients.zeros(scene.count)
    if rec.count == 0:
        return grads

    # --- blend recurrence: w_i = q_i T_i s(T_i), T_i = prod_{j<i} (1 - q_j)
    s, ds = stop_factor(rec.trans, with_grad=True)
    # dT_k/dq_i = -T_k/(1-q_i) for k > i, through both the T and s(T) factors
    h = dldw * (rec.weight + rec.q * rec.trans**2 * ds)
    suffix = _segment_suffix_excl(h, rec.starts, rec.seg_len)
    dq = dldw * rec.trans * s - suffix / (1.0 - rec.q)

    opac = scene.opacity[rec.prim]
    unclamped = (opac * rec.g) < Q_CLAMP
    d_opac = np.where(unclamped, rec.g * dq, 0.0)
    dg = np.where(unclamped, opac * dq, 0.0)

    # --- gaussian falloff and local coordinates
    rays = rec.camera.pixel_rays().reshape(-1, 3)
    d = rays[rec.pixel]
    origin = rec.camera.origin
    mu_rel = scene.position[rec.prim] - origin
    tu = scene.t_u[rec.prim]
    tv = scene.t_v[rec.prim]
    nrm = scene.normal[rec.prim]
    su = scene.scale[rec.prim, 0]
    sv = scene.scale[rec.prim, 1]
    delta = rec.t[:, None] * d - mu_rel
    u = np.einsum("fc,fc->f", delta, tu) / su
    v = np.einsum("fc,fc->f", delta, tv) / sv

    _, dg_drho = gaussian_weight(u * u + v * v, with_grad=True)
    drho = dg_drho * dg
    du = 2.0 * u * drho
    dv = 2.0 * v * drho

    ddelta = (du / su)[:, None] * tu + (dv / sv)[:, None] * tv
    d_tu = (du / su)[:, None] * delta
    d_tv = (dv / sv)[:, None] * delta
    d_su = -du * u / su
    d_sv = -dv * v / sv

    denom = np.einsum("fc,fc->f", d, nrm)
    dt = np.einsum("fc,fc->f", ddelta, d) + dldt
    d_mu = -ddelta + (dt / denom)[:, None] * nrm
    d_n = (-dt / denom)[:, None] * delta
    if d_normal_frag is not None:
        d_n = d_n + d_normal_frag

    _scatter(grads.position, rec.prim, d_mu)
    _scatter(grads.opacity, rec.prim, d_opac)
    _scatter(grads.scale[:, 0], rec.prim, d_su)
    _scatter(grads.scale[:, 1], rec.prim, d_sv)

    # frame gradients -> axis-angle through the Rodrigues jacobian
    d_frame = np.zeros((scene.count, 3, 3))
    _scatter(d_frame[:, :, 0], rec.prim, d_tu)
    _scatter(d_frame[:, :, 1], rec.prim, d_tv)
    _scatter(d_frame[:, :, 2], rec.prim, d_n)
    jac = scene.rotation_jacobian()  # (N, 3, 3, 3)
    grads.rotation += np.einsum("nab,njab->nj", d_frame, jac)
    return grads


def rasterize_backward(output: RenderOutput, image_grads: dict) -> RenderGradients:
    """Pull per-channel image gradients back onto primitive attributes.

    image_grads maps channel names (rgb, albedo, alpha, metallic, roughness,
    depth, normal) to arrays matching that channel's shape; missing channels
    contribute nothing.
    """
    rec = output.fragments
    if rec is None:
        raise RasterError(
            "no fragment record: re-render with record_fragments=True before backward"
        )
    unknown = set(image_grads) - set(_GRAD_KEYS)
    if unknown:
        raise RasterError(f"unknown gradient channels {sorted(unknown)}")

    scene = rec.scene
    grads = RenderGradients.zeros(scene.count)
    h, w = output.shape
    npix = h * w
    if rec.count == 0:
        return grads

    def flat(name, ch):
        arr = image_grads.get(name)
        if arr is None:
            return None
        arr = np.asarray(arr, dtype=np.float64)
        return arr.reshape(npix, ch) if ch > 1 else arr.reshape(npix)

    g_rgb = flat("rgb", 3)
    g_alb = flat("albedo", 3)
    g_alpha = flat("alpha", 1)
    g_met = flat("metallic", 1)
    g_rough = flat("roughness", 1)
    g_depth = flat("depth", 1)
    g_nrm = flat("normal", 3)

    pix = rec.pixel
    prim = rec.prim
    weight = rec.weight
    bg = output.background

    dldw = np.zeros(rec.count)
    dldt = np.zeros(rec.count)
    d_normal_frag = None

    if g_rgb is not None:
        dldw += np.einsum("fc,fc->f", g_rgb[pix], scene.color[prim] - bg)
        _scatter(grads.color, prim, weight[:, None] * g_rgb[pix])
    if g_alb is not None:
        dldw += np.einsum("fc,fc->f", g_alb[pix], scene.albedo[prim] - bg)
        _scatter(grads.albedo, prim, weight[:, None] * g_alb[pix])
    if g_alpha is not None:
        dldw += g_alpha[pix]
    if g_met is not None:
        dldw += g_met[pix] * scene.metallic[prim]
        _scatter(grads.metallic, prim, weight * g_met[pix])
    if g_rough is not None:
        dldw += g_rough[pix] * scene.roughness[prim]
        _scatter(grads.roughness, prim, weight * g_rough[pix])
    if g_depth is not None:
        alpha = output.alpha.reshape(npix)
        dsum = (output.depth * output.alpha).reshape(npix)
        a_safe = np.maximum(alpha, 1e-12)
        live = (alpha > 1e-12).astype(np.float64)
        dldw += g_depth[pix] * (rec.t * a_safe[pix] - dsum[pix] * live[pix]) / a_safe[pix] ** 2
        dldt += g_depth[pix] * weight / a_safe[pix]
    if g_nrm is not None:
        rays = rec.camera.pixel_rays().reshape(-1, 3)
        facing = np.einsum("fc,fc->f", scene.normal[prim], rays[pix])
        flip = np.where(facing > 0.0, -1.0, 1.0)
        n_flip = scene.normal[prim] * flip[:, None]
        dldw += np.einsum("fc,fc->f", g_nrm[pix], n_flip)
        d_normal_frag = (weight * flip)[:, None] * g_nrm[pix]

    core = composite_geometry_backward(rec, dldw, dldt, d_normal_frag)
    return grads.add_(core)
