"""Differentiable texture refinement: render the textured mesh, shade it
under a prefiltered light, and Adam-step the texel values of the albedo,
metallic, and roughness maps against target images (four orthogonal views by
default). Texel values are clamped to [0, 1] after every step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assets.types import Camera
from ..errors import FitError
from ..losses.core import color_loss
from ..losses.weights import LossWeights
from ..parallel import parallel_map
from ..shading.deferred import ShadeInputs, shade_deferred
from ..shading.environment import EnvironmentLight
from .mesh_raster import MeshRender, render_mesh


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 150
    learning_rate: float = 0.05
    weights: LossWeights = field(default_factory=LossWeights)
    threads: int = 1


def _texture_taps(uv: np.ndarray, res: int):
    """Bilinear taps (clamped) into a (res, res) texture for UV queries."""
    x = np.clip(uv[:, 0] * res - 0.5, 0.0, res - 1.0)
    y = np.clip(uv[:, 1] * res - 0.5, 0.0, res - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, res - 2) if res > 1 else np.zeros(len(x), np.int64)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, res - 2) if res > 1 else np.zeros(len(y), np.int64)
    fx = np.clip(x - x0, 0, 1)
    fy = np.clip(y - y0, 0, 1)
    idx = np.stack([y0 * res + x0, y0 * res + x0 + 1,
                    (y0 + 1) * res + x0, (y0 + 1) * res + x0 + 1], axis=-1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                    (1 - fx) * fy, fx * fy], axis=-1)
    return idx, wts


@dataclass
class _ViewCache:
    render: MeshRender
    taps_idx: np.ndarray
    taps_w: np.ndarray
    covered: np.ndarray
    normal: np.ndarray
    view_dir: np.ndarray


def _prepare(vertices, faces, uvs, cameras, res, threads):
    def one(cam):
        r = render_mesh(vertices, faces, cam)
        cov = r.face_id.reshape(-1) >= 0
        fid = r.face_id.reshape(-1)[cov]
        lam = r.bary.reshape(-1, 3)[cov]
        uv = np.einsum("nk,nkc->nc", lam, uvs[fid])
        idx, w = _texture_taps(uv, res)
        rays = cam.pixel_rays().reshape(-1, 3)[cov]
        return _ViewCache(render=r, taps_idx=idx, taps_w=w, covered=cov,
                          normal=r.normal.reshape(-1, 3)[cov], view_dir=-rays)

    return parallel_map(one, cameras, threads)


def refine_textures(
    vertices: np.ndarray,
    faces: np.ndarray,
    uvs: np.ndarray,
    textures: dict,
    target_rgb: list[np.ndarray],
    cameras: list[Camera],
    light: EnvironmentLight,
    config: RefineConfig = RefineConfig(),
):
    """Optimize texel values so shaded renders match the target images.

    textures holds albedo (T, T, 3), metallic (T, T), roughness (T, T);
    targets are linear images composited over black. Returns the refined
    texture dict plus the per-iteration loss history. Geometry and visibility
    are fixed, so the per-view barycentric/tap structure is precomputed once.
    """
    if light is None:
        raise FitError("texture refinement requires a prefiltered light")
    res = textures["albedo"].shape[0]
    views = _prepare(vertices, faces, uvs, cameras, res, config.threads)

    params = {
        "albedo": np.asarray(textures["albedo"], dtype=np.float64).reshape(-1, 3).copy(),
        "metallic": np.asarray(textures["metallic"], dtype=np.float64).reshape(-1).copy(),
        "roughness": np.asarray(textures["roughness"], dtype=np.float64).reshape(-1).copy(),
    }
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    history = []

    last_good = {k: v.copy() for k, v in params.items()}
    for it in range(config.iterations):
        total = 0.0
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        for vc, gt in zip(views, target_rgb):
            h_img, w_img = vc.render.shape
            cov = vc.covered
            alb = np.einsum("nt,ntc->nc", vc.taps_w, params["albedo"][vc.taps_idx])
            met = np.einsum("nt,nt->n", vc.taps_w, params["metallic"][vc.taps_idx])
            rough = np.einsum("nt,nt->n", vc.taps_w, params["roughness"][vc.taps_idx])

            normal_img = np.zeros((h_img * w_img, 3))
            normal_img[cov] = vc.normal
            view_img = np.zeros((h_img * w_img, 3))
            view_img[cov] = vc.view_dir
            alb_img = np.zeros((h_img * w_img, 3))
            alb_img[cov] = alb
            met_img = np.zeros(h_img * w_img)
            met_img[cov] = met
            rough_img = np.zeros(h_img * w_img)
            rough_img[cov] = rough
            alpha_img = cov.astype(np.float64)

            inputs = ShadeInputs(
                normal=normal_img.reshape(h_img, w_img, 3),
                view_dir=view_img.reshape(h_img, w_img, 3),
                albedo=alb_img.reshape(h_img, w_img, 3),
                metallic=met_img.reshape(h_img, w_img),
                roughness=rough_img.reshape(h_img, w_img),
                alpha=alpha_img.reshape(h_img, w_img),
            )
            shaded, sgrads = shade_deferred(inputs, light, with_grads=True)
            _, value, d_shaded = color_loss(shaded, gt, config.weights)
            total += value
            applied = sgrads.apply(d_shaded)
            d_alb = applied["albedo"].reshape(-1, 3)[cov]
            d_met = applied["metallic"].reshape(-1)[cov]
            d_rough = applied["roughness"].reshape(-1)[cov]
            contrib = vc.taps_w[..., None] * d_alb[:, None, :]
            for c in range(3):
                grads["albedo"][:, c] += np.bincount(
                    vc.taps_idx.reshape(-1),
                    weights=contrib[..., c].reshape(-1),
                    minlength=res * res)
            grads["metallic"] += np.bincount(
                vc.taps_idx.reshape(-1),
                weights=(vc.taps_w * d_met[:, None]).reshape(-1),
                minlength=res * res)
            grads["roughness"] += np.bincount(
                vc.taps_idx.reshape(-1),
                weights=(vc.taps_w * d_rough[:, None]).reshape(-1),
                minlength=res * res)

        total /= max(len(views), 1)
        history.append(total)
        if not np.isfinite(total):
            params = last_good
            break
        last_good = {k: v.copy() for k, v in params.items()}
        t = it + 1
        for k in params:
            g = grads[k] / max(len(views), 1)
            adam_m[k] = 0.9 * adam_m[k] + 0.1 * g
            adam_v[k] = 0.999 * adam_v[k] + 0.001 * g * g
            mh = adam_m[k] / (1 - 0.9**t)
            vh = adam_v[k] / (1 - 0.999**t)
            params[k] = np.clip(
                params[k] - config.learning_rate * mh / (np.sqrt(vh) + 1e-8),
                0.0, 1.0)

    return {
        "albedo": params["albedo"].reshape(res, res, 3),
        "metallic": params["metallic"].reshape(res, res),
        "roughness": params["roughness"].reshape(res, res),
    }, history
