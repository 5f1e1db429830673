"""Deferred-shading loss: ties rendered G-buffers to image appearance.

The rendered material channels are alpha-normalized (and the background color
un-composited from the albedo channel) to recover per-pixel material values,
shaded under the prefiltered light, and compared against the ground-truth RGB
with the color loss. Gradients chain through the shading into the rasterized
channels, ready for rasterize_backward.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShadingError
from ..raster.forward import RenderOutput
from ..shading.deferred import ShadeInputs, shade_deferred
from ..shading.environment import EnvironmentLight
from .core import color_loss
from .weights import LossWeights

_EPS = 1e-12


def deferred_shading_loss(
    output: RenderOutput,
    light: EnvironmentLight,
    gt_rgb_composited: np.ndarray,
    weights: LossWeights = LossWeights(),
):
    """Shade the rendered G-buffers and score them against the target image.

    Returns (value, image_grads) where value is already scaled by
    weights.deferred and image_grads maps rasterizer channels to gradients.
    """
    if light is None:
        raise ShadingError("deferred shading loss requires a prefiltered light")
    alpha = output.alpha
    bg = output.background
    a_safe = np.maximum(alpha, _EPS)[..., None]
    fg = alpha > 0.5

    albedo_mat = (output.albedo - (1.0 - alpha[..., None]) * bg) / a_safe
    metallic = output.metallic / a_safe[..., 0]
    roughness = output.roughness / a_safe[..., 0]
    alb_c = np.clip(albedo_mat, 0.0, 1.0)
    met_c = np.clip(metallic, 0.0, 1.0)
    rough_c = np.clip(roughness, 0.0, 1.0)

    n_norm = np.linalg.norm(output.normal, axis=-1, keepdims=True)
    n_hat = np.where(fg[..., None] & (n_norm > _EPS),
                     output.normal / np.maximum(n_norm, _EPS), 0.0)
    rays = output.camera.pixel_rays()

    inputs = ShadeInputs(
        normal=n_hat, view_dir=-rays, albedo=alb_c, metallic=met_c,
        roughness=rough_c, alpha=alpha,
    )
    bg_img = np.broadcast_to(bg, gt_rgb_composited.shape)
    shaded, sgrads = shade_deferred(inputs, light, background=bg_img,
                                    with_grads=True)

    _, total, d_shaded = color_loss(shaded, gt_rgb_composited, weights)
    value = weights.deferred * total
    d_shaded = weights.deferred * d_shaded

    applied = sgrads.apply(d_shaded)

    # clip gates
    d_alb = np.where((albedo_mat > 0) & (albedo_mat < 1), applied["albedo"], 0.0)
    d_met = np.where((metallic > 0) & (metallic < 1), applied["metallic"], 0.0)
    d_rough = np.where((roughness > 0) & (roughness < 1), applied["roughness"], 0.0)

    grads: dict[str, np.ndarray] = {}
    grads["albedo"] = d_alb / a_safe
    grads["metallic"] = d_met / a_safe[..., 0]
    grads["roughness"] = d_rough / a_safe[..., 0]

    # normalization backward for the normal channel
    d_nh = applied["normal"]
    dot = np.einsum("hwc,hwc->hw", d_nh, n_hat)
    grads["normal"] = np.where(
        fg[..., None] & (n_norm > _EPS),
        (d_nh - dot[..., None] * n_hat) / np.maximum(n_norm, _EPS), 0.0)

    # alpha enters through the shade blend and every normalization
    live = (alpha > _EPS).astype(np.float64)
    radiance = np.where(fg[..., None],
                        (shaded - (1.0 - alpha[..., None]) * bg_img)
                        / a_safe, 0.0)
    d_alpha = np.einsum("hwc,hwc->hw", d_shaded,
                        np.where(fg[..., None], radiance - bg_img, 0.0))
    d_alpha += np.einsum("hwc,hwc->hw", d_alb,
                         (bg - albedo_mat) / a_safe) * live
    d_alpha += d_met * (-metallic / a_safe[..., 0]) * live
    d_alpha += d_rough * (-roughness / a_safe[..., 0]) * live
    grads["alpha"] = d_alpha
    return value, grads
