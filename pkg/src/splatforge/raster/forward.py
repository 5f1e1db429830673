"""Differentiable 2D Gaussian surfel rasterizer (forward pass).

Each primitive is a planar elliptical Gaussian disk: rotation columns give the
tangent axes (t_u, t_v) and normal n, scale gives the in-plane standard
deviations. Pixels are shaded at the exact ray/plane intersection, fragments
are depth-sorted per pixel and alpha-composited front to back:
w_i = q_i * prod_{j<i}(1 - q_j) with q_i = opacity_i * exp(-0.5 (u^2 + v^2)).

Cutoffs (applied identically by the test oracles): fragments with g < 1/255
are culled, and to keep the model C^1 (finite differences must match the
analytic gradients) the Gaussian is tapered to exactly zero by a smoothstep
window over the last unit of rho = u^2 + v^2 before the cull radius. Fragments
arriving with transmittance < 1e-4 contribute zero. Fragment order is fixed by
(pixel, intersection depth, primitive id), which makes renders bit-identical
regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..assets.rotation import rotation_matrix
from ..assets.types import Camera, SplatterAsset
from ..errors import RasterError

G_CUTOFF = 1.0 / 255.0
RHO_MAX = -2.0 * np.log(G_CUTOFF)  # support radius^2 in sigma units
TAPER_WIDTH = 1.0  # rho band over which the smoothstep window falls to zero
KAPPA = float(np.sqrt(RHO_MAX))
T_EARLY_STOP = 1e-4
T_STOP_RAMP = 3e-4  # transmittance where the early-stop ramp reaches 1
Q_CLAMP = 1.0 - 1e-7
_MAX_CANDIDATES = 1 << 22  # chunk limit on flattened candidate pixels


def stop_factor(trans: np.ndarray, with_grad: bool = False):
    """Smooth early-stop: 0 below T_EARLY_STOP, 1 above T_STOP_RAMP.

    A hard cutoff would make blend weights jump when a fragment's arriving
    transmittance crosses 1e-4; the smoothstep ramp keeps the model C^1 while
    still zeroing fragments behind (near-)opaque occluders.
    """
    trans = np.asarray(trans, dtype=np.float64)
    x = np.clip((trans - T_EARLY_STOP) / (T_STOP_RAMP - T_EARLY_STOP), 0.0, 1.0)
    s = x * x * (3.0 - 2.0 * x)
    if not with_grad:
        return s
    ramp = (trans > T_EARLY_STOP) & (trans < T_STOP_RAMP)
    ds = np.where(ramp, 6.0 * x * (1.0 - x) / (T_STOP_RAMP - T_EARLY_STOP), 0.0)
    return s, ds


def gaussian_weight(rho: np.ndarray, with_grad: bool = False):
    """Tapered Gaussian falloff exp(-rho/2) * window(rho) and its rho-derivative.

    window is 1 below RHO_MAX - TAPER_WIDTH, 0 above RHO_MAX, and a smoothstep
    in between, so the blend weight reaches zero with zero slope at the cull
    radius (no finite-difference jumps at the support boundary).
    """
    rho = np.asarray(rho, dtype=np.float64)
    x = np.clip((RHO_MAX - rho) / TAPER_WIDTH, 0.0, 1.0)
    window = x * x * (3.0 - 2.0 * x)
    gexp = np.exp(-0.5 * rho)
    g = gexp * window
    if not with_grad:
        return g
    ramp = (rho > RHO_MAX - TAPER_WIDTH) & (rho < RHO_MAX)
    dwindow = np.where(ramp, -6.0 * x * (1.0 - x) / TAPER_WIDTH, 0.0)
    dg = gexp * (dwindow - 0.5 * window)
    return g, dg


@dataclass
class PackedScene:
    """Flattened primitive arrays plus cached tangent frames."""

    position: np.ndarray  # (N, 3)
    rotation: np.ndarray  # (N, 3)
    scale: np.ndarray  # (N, 2)
    opacity: np.ndarray  # (N,)
    color: np.ndarray  # (N, 3)
    albedo: np.ndarray  # (N, 3)
    metallic: np.ndarray  # (N,)
    roughness: np.ndarray  # (N,)
    t_u: np.ndarray  # (N, 3)
    t_v: np.ndarray  # (N, 3)
    normal: np.ndarray  # (N, 3)
    _rot_jacobian: Optional[np.ndarray] = None

    @property
    def count(self) -> int:
        return len(self.position)

    def rotation_jacobian(self) -> np.ndarray:
        """Cached dR/dr for every primitive (shared by all view passes)."""
        if self._rot_jacobian is None:
            from ..assets.rotation import rotation_matrix_jacobian

            self._rot_jacobian = rotation_matrix_jacobian(self.rotation)
        return self._rot_jacobian

    @staticmethod
    def from_asset(asset: SplatterAsset) -> "PackedScene":
        flat = asset.packed()
        return PackedScene.from_arrays(**flat)

    @staticmethod
    def from_arrays(position, rotation, scale, opacity, color, albedo,
                    metallic, roughness) -> "PackedScene":
        rot = np.asarray(rotation, dtype=np.float64)
        mats = rotation_matrix(rot)
        return PackedScene(
            position=np.asarray(position, dtype=np.float64),
            rotation=rot,
            scale=np.asarray(scale, dtype=np.float64),
            opacity=np.asarray(opacity, dtype=np.float64),
            color=np.asarray(color, dtype=np.float64),
            albedo=np.asarray(albedo, dtype=np.float64),
            metallic=np.asarray(metallic, dtype=np.float64),
            roughness=np.asarray(roughness, dtype=np.float64),
            t_u=mats[:, :, 0],
            t_v=mats[:, :, 1],
            normal=mats[:, :, 2],
        )


@dataclass
class FragmentRecord:
    """Per-fragment state sorted by (pixel, depth, primitive id)."""

    pixel: np.ndarray  # (F,) linear pixel index
    prim: np.ndarray  # (F,) primitive index into the packed scene
    t: np.ndarray  # (F,) ray distance at intersection
    g: np.ndarray  # (F,) gaussian value
    q: np.ndarray  # (F,) clamped opacity * g
    trans: np.ndarray  # (F,) transmittance in front of the fragment
    weight: np.ndarray  # (F,) blend weight (zero when early-stopped)
    alive: np.ndarray  # (F,) bool, passed the transmittance early stop
    starts: np.ndarray  # (S,) first fragment of each pixel segment
    seg_pixel: np.ndarray  # (S,) linear pixel of each segment
    seg_len: np.ndarray  # (S,)
    scene: PackedScene
    camera: Camera

    @property
    def count(self) -> int:
        return len(self.pixel)


@dataclass
class RenderOutput:
    """All G-buffer channels for one view.

    depth is the alpha-weighted mean ray distance (0 where empty); normal is
    the alpha-weighted sum of camera-facing splat normals (not unit length).
    """

    rgb: np.ndarray  # (H, W, 3)
    albedo: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    metallic: np.ndarray  # (H, W)
    roughness: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W)
    normal: np.ndarray  # (H, W, 3)
    background: np.ndarray  # (3,)
    camera: Camera
    fragments: Optional[FragmentRecord] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape


def _segment_starts(pixel_sorted: np.ndarray) -> np.ndarray:
    if len(pixel_sorted) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(np.r_[True, pixel_sorted[1:] != pixel_sorted[:-1]])


def _collect_fragments(scene: PackedScene, camera: Camera):
    """Intersect every primitive with its candidate pixels.

    Returns unsorted (pixel, prim, t, g) arrays. Candidate pixels come from a
    conservative screen bounding box of the disk's 1/255 support.
    """
    w, h = camera.resolution
    rays = camera.pixel_rays().reshape(-1, 3)  # (HW, 3)
    origin = camera.origin
    n = scene.count
    if n == 0:
        return (np.zeros(0, np.int64), np.zeros(0, np.int64),
                np.zeros(0), np.zeros(0))

    half_u = (KAPPA * scene.scale[:, 0])[:, None] * scene.t_u
    half_v = (KAPPA * scene.scale[:, 1])[:, None] * scene.t_v
    corners = np.stack(
        [
            scene.position + half_u + half_v,
            scene.position + half_u - half_v,
            scene.position - half_u + half_v,
            scene.position - half_u - half_v,
        ],
        axis=1,
    )  # (N, 4, 3)
    pix, z_fwd = camera.project(corners)
    in_front = z_fwd > 0.5 * camera.near
    any_front = in_front.any(axis=1)
    all_front = in_front.all(axis=1)

    lo = np.full((n, 2), 0, dtype=np.int64)
    hi = np.full((n, 2), 0, dtype=np.int64)
    safe = all_front
    if np.any(safe):
        p = pix[safe]
        lo[safe, 0] = np.clip(np.floor(p[..., 0].min(axis=1)) - 1, 0, w - 1)
        hi[safe, 0] = np.clip(np.ceil(p[..., 0].max(axis=1)) + 1, 0, w - 1)
        lo[safe, 1] = np.clip(np.floor(p[..., 1].min(axis=1)) - 1, 0, h - 1)
        hi[safe, 1] = np.clip(np.ceil(p[..., 1].max(axis=1)) + 1, 0, h - 1)
    # straddling the near plane: fall back to the full viewport
    straddle = any_front & ~all_front
    if np.any(straddle):
        lo[straddle] = 0
        hi[straddle, 0] = w - 1
        hi[straddle, 1] = h - 1
    active = any_front & (hi[:, 0] >= lo[:, 0]) & (hi[:, 1] >= lo[:, 1])
    ids = np.flatnonzero(active)
    if len(ids) == 0:
        return (np.zeros(0, np.int64), np.zeros(0, np.int64),
                np.zeros(0), np.zeros(0))

    widths = hi[ids, 0] - lo[ids, 0] + 1
    heights = hi[ids, 1] - lo[ids, 1] + 1
    areas = widths * heights
    out_pix, out_prim, out_t, out_g = [], [], [], []
    # chunk by candidate count to bound temporaries
    csum = np.cumsum(areas)
    split_at = np.searchsorted(csum, np.arange(1, csum[-1] // _MAX_CANDIDATES + 1)
                               * _MAX_CANDIDATES)
    for part in np.split(np.arange(len(ids)), split_at):
        if len(part) == 0:
            continue
        res = _intersect_flat(scene, ids[part], lo[ids[part]], widths[part],
                              heights[part], rays, origin, camera, w)
        if res is not None:
            out_pix.append(res[0])
            out_prim.append(res[1])
            out_t.append(res[2])
            out_g.append(res[3])

    if not out_pix:
        return (np.zeros(0, np.int64), np.zeros(0, np.int64),
                np.zeros(0), np.zeros(0))
    return (
        np.concatenate(out_pix),
        np.concatenate(out_prim),
        np.concatenate(out_t),
        np.concatenate(out_g),
    )


def _intersect_flat(scene, ids, lo, widths, heights, rays, origin, camera,
                    img_width):
    """Exact ray/plane evaluation over flat per-primitive bbox candidates."""
    areas = widths * heights
    total = int(areas.sum())
    if total == 0:
        return None
    starts = np.concatenate([[0], np.cumsum(areas)[:-1]])
    prim = np.repeat(ids, areas)
    within = np.arange(total, dtype=np.int64) - np.repeat(starts, areas)
    rep_w = np.repeat(widths, areas)
    px = np.repeat(lo[:, 0], areas) + within % rep_w
    py = np.repeat(lo[:, 1], areas) + within // rep_w
    lin = py * img_width + px

    d = rays[lin]
    nrm = scene.normal[prim]
    denom = d[:, 0] * nrm[:, 0] + d[:, 1] * nrm[:, 1] + d[:, 2] * nrm[:, 2]
    mu_rel = scene.position[prim] - origin
    num = (mu_rel * nrm).sum(axis=1)
    valid = np.abs(denom) > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / np.where(valid, denom, 1.0)
    valid &= (t > camera.near) & (t < camera.far)

    delta = t[:, None] * d - mu_rel
    tu = scene.t_u[prim]
    tv = scene.t_v[prim]
    u = (delta * tu).sum(axis=1) / scene.scale[prim, 0]
    v = (delta * tv).sum(axis=1) / scene.scale[prim, 1]
    rho = u * u + v * v
    valid &= rho < RHO_MAX
    if not valid.any():
        return None
    g = gaussian_weight(rho[valid])
    return lin[valid], prim[valid], t[valid], g


def _composite(pixel, prim, t, g, scene):
    """Sort fragments and run the exact sequential front-to-back blend."""
    order = np.lexsort((prim, t, pixel))
    pixel, prim, t, g = pixel[order], prim[order], t[order], g[order]
    q = np.clip(scene.opacity[prim] * g, 0.0, Q_CLAMP)

    starts = _segment_starts(pixel)
    nseg = len(starts)
    seg_len = np.diff(np.r_[starts, len(pixel)])
    seg_pixel = pixel[starts] if nseg else np.zeros(0, np.int64)

    trans = np.ones(len(pixel))
    t_cur = np.ones(nseg)
    max_len = int(seg_len.max()) if nseg else 0
    for k in range(max_len):
        segs = np.flatnonzero(seg_len > k)
        idx = starts[segs] + k
        trans[idx] = t_cur[segs]
        t_cur[segs] = t_cur[segs] * (1.0 - q[idx])
    alive = trans > T_EARLY_STOP
    weight = q * trans * stop_factor(trans)
    return pixel, prim, t, g, q, trans, weight, alive, starts, seg_pixel, seg_len


def rasterize(
    asset_or_scene,
    camera: Camera,
    background=(0.0, 0.0, 0.0),
    record_fragments: bool = True,
) -> RenderOutput:
    """Render all G-buffer channels of a splat asset from one camera."""
    if isinstance(asset_or_scene, PackedScene):
        scene = asset_or_scene
    else:
        scene = PackedScene.from_asset(asset_or_scene)
    bad = ~np.isfinite(scene.position).all(axis=-1)
    bad |= ~np.isfinite(scene.scale).all(axis=-1) | (scene.scale <= 0).any(axis=-1)
    if bad.any():
        raise RasterError(
            f"non-finite or degenerate primitive {int(np.nonzero(bad)[0][0])}"
        )

    w, h = camera.resolution
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    pixel, prim, t, g = _collect_fragments(scene, camera)
    (pixel, prim, t, g, q, trans, weight, alive,
     starts, seg_pixel, seg_len) = _composite(pixel, prim, t, g, scene)

    npix = h * w
    alpha = np.zeros(npix)
    rgb = np.zeros((npix, 3))
    albedo = np.zeros((npix, 3))
    metallic = np.zeros(npix)
    rough = np.zeros(npix)
    depth_sum = np.zeros(npix)
    normal = np.zeros((npix, 3))

    if len(pixel):
        rays = camera.pixel_rays().reshape(-1, 3)
        n_raw = scene.normal[prim]
        facing = np.einsum("fc,fc->f", n_raw, rays[pixel])
        flip = np.where(facing > 0.0, -1.0, 1.0)
        n_flip = n_raw * flip[:, None]

        def seg_sum(values):
            return np.add.reduceat(values, starts, axis=0)

        alpha[seg_pixel] = seg_sum(weight)
        rgb[seg_pixel] = seg_sum(weight[:, None] * scene.color[prim])
        albedo[seg_pixel] = seg_sum(weight[:, None] * scene.albedo[prim])
        metallic[seg_pixel] = seg_sum(weight * scene.metallic[prim])
        rough[seg_pixel] = seg_sum(weight * scene.roughness[prim])
        depth_sum[seg_pixel] = seg_sum(weight * t)
        normal[seg_pixel] = seg_sum(weight[:, None] * n_flip)

    rgb += (1.0 - alpha)[:, None] * bg
    albedo += (1.0 - alpha)[:, None] * bg
    depth = depth_sum / np.maximum(alpha, 1e-12)
    depth[alpha <= 0.0] = 0.0

    record = None
    if record_fragments:
        record = FragmentRecord(
            pixel=pixel, prim=prim, t=t, g=g, q=q, trans=trans, weight=weight,
            alive=alive, starts=starts, seg_pixel=seg_pixel, seg_len=seg_len,
            scene=scene, camera=camera,
        )
    return RenderOutput(
        rgb=rgb.reshape(h, w, 3),
        albedo=albedo.reshape(h, w, 3),
        alpha=alpha.reshape(h, w),
        metallic=metallic.reshape(h, w),
        roughness=rough.reshape(h, w),
        depth=depth.reshape(h, w),
        normal=normal.reshape(h, w, 3),
        background=bg,
        camera=camera,
        fragments=record,
    )
