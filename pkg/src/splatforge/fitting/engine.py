"""Multi-view gradient fitting of splat assets to G-buffer targets.

Stands in for a generative model at desk scale: primitives are initialized on
camera rays at the target depth (one per target pixel, random in bounds where
the target is background) and every attribute is optimized with Adam against
the full supervision stack: color (MSE + SSIM) on RGB and albedo over a
seeded random background, alpha BCE, masked material MSE, depth distortion
with its epoch schedule, normal consistency, and optionally the deferred
shading loss when a light is supplied.

Bounded attributes are optimized in logit space and scales in log space, so
every exported asset satisfies the primitive invariants by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..assets.rotation import canonicalize, frame_to_axis_angle
from ..assets.types import Bounds, Camera, GBufferTarget, PrimitiveGrid, SplatterAsset
from ..errors import FitError, RasterError
from ..losses.core import alpha_loss, color_loss, depth_loss, material_loss
from ..losses.deferred import deferred_shading_loss
from ..losses.weights import LossBreakdown, LossWeights
from ..parallel import parallel_map
from ..raster import PackedScene, rasterize, rasterize_backward
from ..raster.backward import RenderGradients
from ..raster.regularizers import depth_distortion, normal_consistency_image_grads
from ..shading.environment import EnvironmentLight
from .adam import AdamState

_LOGIT_CLIP = 1e-4


@dataclass(frozen=True)
class FitConfig:
    iterations: int = 600
    seed: int = 0
    views_per_step: int = 8  # four orthogonal + four random views per batch
    iters_per_epoch: int = 100
    weights: LossWeights = field(default_factory=LossWeights)
    lr_position: float = 1e-3  # multiplied by the scene extent
    lr_rotation: float = 1e-3
    lr_log_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 1e-2
    lr_material: float = 1e-2
    threads: int = 1
    checkpoint_every: int = 25

    def __post_init__(self):
        if self.iterations < 0:
            raise FitError("iterations must be >= 0")
        for name in ("lr_position", "lr_rotation", "lr_log_scale",
                     "lr_opacity", "lr_color", "lr_material"):
            if getattr(self, name) <= 0:
                raise FitError(f"{name} must be > 0")
        self.weights.validate()


def _logit(x):
    x = np.clip(x, _LOGIT_CLIP, 1.0 - _LOGIT_CLIP)
    return np.log(x / (1.0 - x))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def bounds_from_targets(targets, cameras, margin=0.25) -> Bounds:
    points = []
    for tgt, cam in zip(targets, cameras):
        fg = tgt.foreground()
        if not fg.any():
            continue
        rays = cam.pixel_rays()
        points.append((cam.origin + rays * tgt.depth[..., None])[fg])
    if not points:
        raise FitError("all targets are background: nothing to fit")
    pts = np.concatenate(points, axis=0)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = margin * max(float((hi - lo).max()), 1e-3)
    return Bounds(lo - pad, hi + pad)


class SplatFitter:
    """Owns the parameter vectors and the optimization loop."""

    def __init__(self, targets: list[GBufferTarget], cameras: list[Camera],
                 config: FitConfig, bounds: Bounds | None = None,
                 light: EnvironmentLight | None = None):
        if len(targets) < 2:
            raise FitError("fitting requires at least 2 views")
        if len(targets) != len(cameras):
            raise FitError("one camera per target required")
        self.targets = list(targets)
        self.cameras = list(cameras)
        self.config = config
        self.light = light
        self.bounds = bounds if bounds is not None else bounds_from_targets(
            targets, cameras)
        self.grid_shape = targets[0].shape
        self.rng = np.random.default_rng(config.seed)
        self.adam = AdamState()
        self.params = self._initialize()
        self._checkpoint = {k: v.copy() for k, v in self.params.items()}
        self.diverged = False

    # -- initialization ----------------------------------------------------
    def _initialize(self) -> dict:
        pos, rot, lsc, uo, uc, ua, um, ur = [], [], [], [], [], [], [], []
        for tgt, cam in zip(self.targets, self.cameras):
            h, w = tgt.shape
            rays = cam.pixel_rays()
            fg = tgt.foreground()
            p = cam.origin + rays * tgt.depth[..., None]
            rand = self.rng.uniform(self.bounds.lo, self.bounds.hi, (h, w, 3))
            p = np.where(fg[..., None], p, rand)

            n = np.where(fg[..., None], tgt.normal, [0.0, 0.0, 1.0])
            if tgt.normal_frame == "camera":
                n = n @ cam.rotation_w_from_c.T
            nn = n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-9)
            up = np.where(np.abs(nn[..., 2:3]) < 0.99, [0.0, 0.0, 1.0],
                          [1.0, 0.0, 0.0])
            t1 = np.cross(up, nn)
            t1 /= np.maximum(np.linalg.norm(t1, axis=-1, keepdims=True), 1e-9)
            t2 = np.cross(nn, t1)
            r = frame_to_axis_angle(t1.reshape(-1, 3), t2.reshape(-1, 3),
                                    nn.reshape(-1, 3)).reshape(h, w, 3)

            depth_safe = np.where(fg, tgt.depth, 1.0)
            foot = 2.0 * np.tan(0.5 * cam.fov_y) / h * depth_safe
            scale = np.where(fg, 0.8 * foot, 0.02)

            pos.append(p.reshape(-1, 3))
            rot.append(r.reshape(-1, 3))
            lsc.append(np.log(np.repeat(scale.reshape(-1, 1), 2, axis=1)))
            uo.append(_logit(np.where(fg, 0.9, 0.05)).reshape(-1))
            uc.append(np.full((h * w, 3), 0.0))   # sigmoid(0) = 0.5
            ua.append(np.full((h * w, 3), 0.0))
            um.append(np.full(h * w, 0.0))
            ur.append(np.full(h * w, 0.0))
        return {
            "position": np.concatenate(pos),
            "rotation": np.concatenate(rot),
            "log_scale": np.concatenate(lsc),
            "u_opacity": np.concatenate(uo),
            "u_color": np.concatenate(uc),
            "u_albedo": np.concatenate(ua),
            "u_metallic": np.concatenate(um),
            "u_roughness": np.concatenate(ur),
        }

    # -- parameter mapping ---------------------------------------------------
    def _scene(self) -> PackedScene:
        p = self.params
        return PackedScene.from_arrays(
            position=p["position"], rotation=p["rotation"],
            scale=np.exp(p["log_scale"]), opacity=_sigmoid(p["u_opacity"]),
            color=_sigmoid(p["u_color"]), albedo=_sigmoid(p["u_albedo"]),
            metallic=_sigmoid(p["u_metallic"]),
            roughness=_sigmoid(p["u_roughness"]),
        )

    def current_asset(self) -> SplatterAsset:
        scene = self._scene()
        h, w = self.grid_shape
        per = h * w
        views = []
        rot = canonicalize(scene.rotation)
        pos = self.bounds.clip(scene.position)
        for v in range(len(self.targets)):
            sl = slice(v * per, (v + 1) * per)
            views.append(PrimitiveGrid.from_flat(
                {
                    "position": pos[sl], "rotation": rot[sl],
                    "scale": scene.scale[sl], "opacity": scene.opacity[sl],
                    "color": scene.color[sl], "albedo": scene.albedo[sl],
                    "metallic": scene.metallic[sl],
                    "roughness": scene.roughness[sl],
                },
                (h, w),
            ))
        return SplatterAsset(views=views, cameras=self.cameras,
                             bounds=self.bounds)

    # -- one optimization step ------------------------------------------------
    def _view_pass(self, scene, view_idx, bg, epoch, with_grads=True):
        tgt = self.targets[view_idx]
        cam = self.cameras[view_idx]
        w = self.config.weights
        # fragments are needed even without grads (depth distortion value)
        out = rasterize(scene, cam, background=bg, record_fragments=True)
        breakdown = LossBreakdown()
        grads_img: dict[str, np.ndarray] = {}

        gt_rgb = tgt.rgb + (1.0 - tgt.alpha[..., None]) * bg
        parts, total, g_rgb = color_loss(out.rgb, gt_rgb, w)
        breakdown.color_mse += parts["color_mse"]
        breakdown.color_ssim += parts["color_ssim"]
        grads_img["rgb"] = g_rgb

        gt_alb = tgt.albedo + (1.0 - tgt.alpha[..., None]) * bg
        parts_a, total_a, g_alb = color_loss(out.albedo, gt_alb, w)
        breakdown.color_mse += parts_a["color_mse"]
        breakdown.color_ssim += parts_a["color_ssim"]
        grads_img["albedo"] = g_alb

        v_alpha, g_alpha = alpha_loss(out.alpha, tgt.alpha)
        breakdown.alpha_bce = w.alpha * v_alpha
        grads_img["alpha"] = w.alpha * g_alpha

        v_mat, g_met, g_rough = material_loss(out.metallic, out.roughness,
                                              tgt.metallic, tgt.roughness,
                                              tgt.alpha)
        breakdown.material_mse = w.material * v_mat
        grads_img["metallic"] = w.material * g_met
        grads_img["roughness"] = w.material * g_rough

        if w.depth > 0:
            v_d, g_d = depth_loss(out.depth, tgt.depth, tgt.alpha)
            breakdown.depth_l1 = w.depth * v_d
            grads_img["depth"] = w.depth * g_d

        if w.normal_consistency > 0:
            v_nc, nc_grads = normal_consistency_image_grads(out)
            breakdown.normal_consistency = w.normal_consistency * v_nc
            for key, g in nc_grads.items():
                grads_img[key] = grads_img.get(key, 0.0) + w.normal_consistency * g

        if self.light is not None and w.deferred > 0:
            v_def, def_grads = deferred_shading_loss(out, self.light, gt_rgb, w)
            breakdown.deferred_shading = v_def
            for key, g in def_grads.items():
                grads_img[key] = grads_img.get(key, 0.0) + g

        if not with_grads:
            w_dist = self.config.weights.distortion(epoch)
            v_dist, _ = depth_distortion(out, with_grads=False)
            breakdown.distortion = w_dist * v_dist
            return breakdown, None

        grads = rasterize_backward(out, grads_img)
        w_dist = self.config.weights.distortion(epoch)
        v_dist, g_dist = depth_distortion(out)
        breakdown.distortion = w_dist * v_dist
        grads.add_(g_dist.scaled(w_dist))
        return breakdown, grads

    def _select_views(self) -> list[int]:
        n = len(self.targets)
        k = min(self.config.views_per_step, n)
        if k == n:
            return list(range(n))
        return sorted(self.rng.permutation(n)[:k].tolist())

    def step(self, iteration: int) -> LossBreakdown:
        bg = self.rng.uniform(0.0, 1.0, 3)
        views = self._select_views()
        epoch = iteration // self.config.iters_per_epoch

        try:
            scene = self._scene()
            results = parallel_map(
                lambda v: self._view_pass(scene, v, bg, epoch),
                views, self.config.threads)
        except (RasterError, FloatingPointError):
            results = None

        breakdown = LossBreakdown()
        if results is not None:
            total_grads = RenderGradients.zeros(scene.count)
            for part, grads in results:
                breakdown.add_(part)
                total_grads.add_(grads)

        if results is None or not np.isfinite(breakdown.total):
            # divergence guard: roll back to the last good checkpoint
            self.params = {k: v.copy() for k, v in self._checkpoint.items()}
            self.diverged = True
            breakdown.color_mse = float("nan")
            return breakdown

        p = self.params
        sig_o = _sigmoid(p["u_opacity"])
        sig_c = _sigmoid(p["u_color"])
        sig_a = _sigmoid(p["u_albedo"])
        sig_m = _sigmoid(p["u_metallic"])
        sig_r = _sigmoid(p["u_roughness"])
        grads = {
            "position": total_grads.position,
            "rotation": total_grads.rotation,
            "log_scale": total_grads.scale * scene.scale,
            "u_opacity": total_grads.opacity * sig_o * (1 - sig_o),
            "u_color": total_grads.color * sig_c * (1 - sig_c),
            "u_albedo": total_grads.albedo * sig_a * (1 - sig_a),
            "u_metallic": total_grads.metallic * sig_m * (1 - sig_m),
            "u_roughness": total_grads.roughness * sig_r * (1 - sig_r),
        }
        extent = float(self.bounds.extent.max())
        lrs = {
            "position": self.config.lr_position * extent,
            "rotation": self.config.lr_rotation,
            "log_scale": self.config.lr_log_scale,
            "u_opacity": self.config.lr_opacity,
            "u_color": self.config.lr_color,
            "u_albedo": self.config.lr_color,
            "u_metallic": self.config.lr_material,
            "u_roughness": self.config.lr_material,
        }
        self.adam.step(self.params, grads, lrs)

        if (self.config.checkpoint_every > 0
                and (iteration + 1) % self.config.checkpoint_every == 0):
            self._checkpoint = {k: v.copy() for k, v in self.params.items()}
        return breakdown

    def initial_breakdown(self) -> LossBreakdown:
        bg = np.full(3, 0.5)
        scene = self._scene()
        breakdown = LossBreakdown()
        for v in range(len(self.targets)):
            part, _ = self._view_pass(scene, v, bg, 0, with_grads=False)
            breakdown.add_(part)
        return breakdown

    def run(self):
        metrics = [dict(iteration=0, **self.initial_breakdown().as_dict())]
        for it in range(self.config.iterations):
            breakdown = self.step(it)
            metrics.append(dict(iteration=it + 1, **breakdown.as_dict()))
            if self.diverged:
                break
        return self.current_asset(), metrics


def fit_asset(targets: list[GBufferTarget], cameras: list[Camera],
              config: FitConfig, bounds: Bounds | None = None,
              light: EnvironmentLight | None = None):
    """Fit a splat asset to multi-view G-buffer targets.

    Returns (asset, metrics rows); deterministic for a fixed seed and any
    thread count. On a non-finite loss the fitter restores the last
    checkpoint and stops (flag via metrics length < iterations + 1).
    """
    fitter = SplatFitter(targets, cameras, config, bounds=bounds, light=light)
    return fitter.run()
