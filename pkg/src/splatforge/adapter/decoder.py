"""Feature decoder: learned 4x sub-pixel upsampling plus the Gaussian head.

The head is a zero-initialized 1x1 projection to 17 channels per pixel
(3 position: ray depth + 2 tangential offsets, 3 rotation, 2 scale,
1 opacity, 3 color, 3 albedo, 1 metallic, 1 roughness) followed by fixed
range-limiting activations, so every decoded primitive satisfies the asset
invariants by construction: with zero head weights all attributes sit at
their activation midpoints (opacity 0.5, mid-range scale, canonical depth).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..assets.types import Bounds, Camera, PrimitiveGrid, SplatterAsset
from ..errors import SplatforgeError
from ..raster.backward import RenderGradients
from . import nn_ops

HEAD_CHANNELS = 17
UPSCALE = 4
ROT_LIMIT = np.pi / np.sqrt(3.0)  # per-component cap keeps |r| <= pi
SCALE_LOG_RANGE = (np.log(1e-4), np.log(0.5))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GaussianHead:
    weight: np.ndarray  # (17, C_in)
    bias: np.ndarray  # (17,)

    @staticmethod
    def create(c_in: int) -> "GaussianHead":
        return GaussianHead(weight=np.zeros((HEAD_CHANNELS, c_in)),
                            bias=np.zeros(HEAD_CHANNELS))


@dataclass
class SplatDecoder:
    """up 1x1 conv -> pixel shuffle x4 -> GaussianHead."""

    up_weight: np.ndarray  # (C_mid * 16, C_in)
    up_bias: np.ndarray
    head: GaussianHead
    bounds: Bounds
    offset_scale: float  # world units of the max tangential offset

    @staticmethod
    def create(c_in: int, c_mid: int, bounds: Bounds, seed: int = 0
               ) -> "SplatDecoder":
        rng = np.random.default_rng(seed)
        return SplatDecoder(
            up_weight=rng.normal(0, 1.0 / np.sqrt(c_in),
                                 (c_mid * UPSCALE * UPSCALE, c_in)),
            up_bias=np.zeros(c_mid * UPSCALE * UPSCALE),
            head=GaussianHead.create(c_mid),
            bounds=bounds,
            offset_scale=0.1 * float(bounds.extent.max()),
        )

    def parameters(self) -> dict:
        return {"up_weight": self.up_weight, "up_bias": self.up_bias,
                "head_weight": self.head.weight, "head_bias": self.head.bias}


def _depth_range(camera: Camera, bounds: Bounds) -> tuple[float, float]:
    center_dist = float(np.linalg.norm(bounds.center - camera.origin))
    r = bounds.radius
    return max(center_dist - r, camera.near), center_dist + r


def decode_views(decoder: SplatDecoder, latents: np.ndarray,
                 cameras: list[Camera]):
    """(V, C, H, W) latents -> SplatterAsset with (4H, 4W) grids per view.

    Returns (asset, cache) where cache replays the activation chain for
    backward. The latent spatial size times 4 must match each camera's
    resolution.
    """
    v, c, h, w = latents.shape
    if len(cameras) != v:
        raise SplatforgeError("one camera required per latent view")
    gh, gw = h * UPSCALE, w * UPSCALE
    for cam in cameras:
        if cam.resolution != (gw, gh):
            raise SplatforgeError(
                f"latent {h}x{w} upsamples to {gh}x{gw}, camera expects "
                f"{cam.resolution[1]}x{cam.resolution[0]}")

    pre = nn_ops.conv1x1(latents, decoder.up_weight, decoder.up_bias)
    feats = nn_ops.pixel_shuffle(pre, UPSCALE)  # (V, C_mid, gh, gw)
    raw = nn_ops.conv1x1(feats, decoder.head.weight, decoder.head.bias)

    views = []
    cache_views = []
    lo, hi = decoder.bounds.lo, decoder.bounds.hi
    ln_lo, ln_hi = SCALE_LOG_RANGE
    for vi, cam in enumerate(cameras):
        r = raw[vi]
        rays = cam.pixel_rays()
        rot_wc = cam.rotation_w_from_c
        right = np.broadcast_to(rot_wc[:, 0], (gh, gw, 3))
        up = np.broadcast_to(rot_wc[:, 1], (gh, gw, 3))
        d_lo, d_hi = _depth_range(cam, decoder.bounds)

        sig_depth = _sigmoid(r[0])
        depth = d_lo + sig_depth * (d_hi - d_lo)
        tan_u = np.tanh(r[1])
        tan_v = np.tanh(r[2])
        pos_raw = (cam.origin + rays * depth[..., None]
                   + decoder.offset_scale * (tan_u[..., None] * right
                                             + tan_v[..., None] * up))
        position = np.clip(pos_raw, lo, hi)

        rot_t = np.tanh(r[3:6])
        rotation = np.moveaxis(ROT_LIMIT * rot_t, 0, -1)

        sig_scale = _sigmoid(r[6:8])
        scale = np.moveaxis(np.exp(ln_lo + sig_scale * (ln_hi - ln_lo)), 0, -1)

        sig_rest = _sigmoid(r[8:17])
        views.append(PrimitiveGrid(
            position=position,
            rotation=rotation,
            scale=scale,
            opacity=sig_rest[0],
            color=np.moveaxis(sig_rest[1:4], 0, -1),
            albedo=np.moveaxis(sig_rest[4:7], 0, -1),
            metallic=sig_rest[7],
            roughness=sig_rest[8],
        ))
        cache_views.append({
            "rays": rays, "right": right, "up": up,
            "d_range": (d_lo, d_hi), "sig_depth": sig_depth,
            "tan_u": tan_u, "tan_v": tan_v, "pos_raw": pos_raw,
            "rot_t": rot_t, "sig_scale": sig_scale, "sig_rest": sig_rest,
            "scale": scale,
        })
    asset = SplatterAsset(views=views, cameras=cameras, bounds=decoder.bounds)
    cache = {"latents": latents, "pre": pre, "feats": feats,
             "views": cache_views, "grid": (gh, gw)}
    return asset, cache


def decode_backward(decoder: SplatDecoder, cache, grads: RenderGradients):
    """Chain per-primitive gradients into decoder parameters and latents.

    Returns (d_latents, param_grads dict matching decoder.parameters()).
    """
    gh, gw = cache["grid"]
    per = gh * gw
    n_views = len(cache["views"])
    ln_lo, ln_hi = SCALE_LOG_RANGE
    d_raw = np.zeros((n_views,) + (HEAD_CHANNELS, gh, gw))
    for vi, vc in enumerate(cache["views"]):
        sl = slice(vi * per, (vi + 1) * per)
        d_pos = grads.position[sl].reshape(gh, gw, 3)
        # clamp gate
        gate = ((vc["pos_raw"] > decoder.bounds.lo)
                & (vc["pos_raw"] < decoder.bounds.hi))
        d_pos = np.where(gate, d_pos, 0.0)
        d_lo, d_hi = vc["d_range"]
        d_depth = np.einsum("hwc,hwc->hw", d_pos, vc["rays"])
        sd = vc["sig_depth"]
        d_raw[vi, 0] = d_depth * (d_hi - d_lo) * sd * (1 - sd)
        d_tu = np.einsum("hwc,hwc->hw", d_pos, vc["right"]) * decoder.offset_scale
        d_tv = np.einsum("hwc,hwc->hw", d_pos, vc["up"]) * decoder.offset_scale
        d_raw[vi, 1] = d_tu * (1 - vc["tan_u"] ** 2)
        d_raw[vi, 2] = d_tv * (1 - vc["tan_v"] ** 2)

        d_rot = np.moveaxis(grads.rotation[sl].reshape(gh, gw, 3), -1, 0)
        d_raw[vi, 3:6] = d_rot * ROT_LIMIT * (1 - vc["rot_t"] ** 2)

        d_scale = np.moveaxis(grads.scale[sl].reshape(gh, gw, 2), -1, 0)
        ss = vc["sig_scale"]
        scale_chw = np.moveaxis(vc["scale"], -1, 0)
        d_raw[vi, 6:8] = d_scale * scale_chw * (ln_hi - ln_lo) * ss * (1 - ss)

        rest = vc["sig_rest"]
        d_rest = np.concatenate([
            grads.opacity[sl].reshape(1, gh, gw),
            np.moveaxis(grads.color[sl].reshape(gh, gw, 3), -1, 0),
            np.moveaxis(grads.albedo[sl].reshape(gh, gw, 3), -1, 0),
            grads.metallic[sl].reshape(1, gh, gw),
            grads.roughness[sl].reshape(1, gh, gw),
        ])
        d_raw[vi, 8:17] = d_rest * rest * (1 - rest)

    d_feats, d_head_w, d_head_b = nn_ops.conv1x1_backward(
        cache["feats"], decoder.head.weight, d_raw)
    d_pre = nn_ops.pixel_shuffle_backward(d_feats, UPSCALE)
    d_latents, d_up_w, d_up_b = nn_ops.conv1x1_backward(
        cache["latents"], decoder.up_weight, d_pre)
    return d_latents, {
        "up_weight": d_up_w, "up_bias": d_up_b,
        "head_weight": d_head_w, "head_bias": d_head_b,
    }
