"""Toy adapter training pipeline: two frozen branches (geometry stand-in and
appearance stand-in) wrapped by zero convolutions, crossed by branch
exchanges after each block, decoded to a splat asset, rendered, and
supervised with the standard loss stack. Only the zero convolutions, the
exchange convolutions, the decoder upsampler, and the head train; the frozen
parameters are checksum-verified before and after every step."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..assets.types import Bounds, Camera, GBufferTarget, SplatterAsset
from ..errors import SchemaError, SplatforgeError
from ..fitting.adam import AdamState
from ..losses.core import alpha_loss, color_loss, material_loss
from ..losses.weights import LossBreakdown, LossWeights
from ..raster import rasterize, rasterize_backward
from ..raster.backward import RenderGradients
from ..raster.regularizers import depth_distortion
from .algebra import (
    block_adapter_backward,
    block_adapter_forward,
    branch_exchange_backward,
    branch_exchange_forward,
)
from .blocks import FrozenBlock, ZeroConv
from .decoder import SplatDecoder, decode_backward, decode_views


@dataclass
class AdapterPipeline:
    """Frozen two-branch stack with trainable zero-conv adaptation."""

    block1_g: FrozenBlock
    block1_a: FrozenBlock
    block2_g: FrozenBlock
    block2_a: FrozenBlock
    zc: dict  # name -> ZeroConv (wrapper outs/res + exchange pairs)
    decoder: SplatDecoder
    channels: int

    @staticmethod
    def create(channels: int = 8, cond_channels: int = 2, c_mid: int = 12,
               bounds: Bounds | None = None, seed: int = 0) -> "AdapterPipeline":
        if bounds is None:
            bounds = Bounds([-1.0] * 3, [1.0] * 3)
        mk = FrozenBlock.create
        c = channels
        pipeline = AdapterPipeline(
            block1_g=mk(c, 0, cond_channels, seed=seed + 1),
            block1_a=mk(c, 0, cond_channels, seed=seed + 2),
            block2_g=mk(c, c, cond_channels, seed=seed + 3),
            block2_a=mk(c, c, cond_channels, seed=seed + 4),
            zc={
                "w1g_out": ZeroConv.create(c, c),
                "w1a_out": ZeroConv.create(c, c),
                "x1_ga": ZeroConv.create(c, c),
                "x1_ag": ZeroConv.create(c, c),
                "w2g_res": ZeroConv.create(c, c),
                "w2g_out": ZeroConv.create(c, c),
                "w2a_res": ZeroConv.create(c, c),
                "w2a_out": ZeroConv.create(c, c),
                "x2_ga": ZeroConv.create(c, c),
                "x2_ag": ZeroConv.create(c, c),
            },
            decoder=SplatDecoder.create(2 * c, c_mid, bounds, seed=seed + 9),
            channels=c,
        )
        return pipeline

    def frozen_checksum(self) -> str:
        return "".join(b.checksum() for b in
                       (self.block1_g, self.block1_a,
                        self.block2_g, self.block2_a))

    def trainable_parameters(self) -> dict:
        params = {}
        for name, zc in self.zc.items():
            params[f"{name}_w"] = zc.weight
            params[f"{name}_b"] = zc.bias
        for name, arr in self.decoder.parameters().items():
            params[f"dec_{name}"] = arr
        return params

    def zero_convs_are_zero(self) -> bool:
        return all(zc.is_zero for zc in self.zc.values())

    # -- forward -----------------------------------------------------------
    def forward(self, x_g, x_a, skip_g, skip_a, cond, cameras):
        """Run both branches through wrapper/exchange stacks and decode."""
        y1g, y1g_p, c1g = block_adapter_forward(
            self.block1_g, None, self.zc["w1g_out"], x_g, None, cond)
        y1a, y1a_p, c1a = block_adapter_forward(
            self.block1_a, None, self.zc["w1a_out"], x_a, None, cond)
        z1g, z1a, cx1 = branch_exchange_forward(
            self.zc["x1_ag"], self.zc["x1_ga"], y1g_p, y1a_p)

        y2g, y2g_p, c2g = block_adapter_forward(
            self.block2_g, self.zc["w2g_res"], self.zc["w2g_out"],
            z1g, skip_g, cond)
        y2a, y2a_p, c2a = block_adapter_forward(
            self.block2_a, self.zc["w2a_res"], self.zc["w2a_out"],
            z1a, skip_a, cond)
        z2g, z2a, cx2 = branch_exchange_forward(
            self.zc["x2_ag"], self.zc["x2_ga"], y2g_p, y2a_p)

        latent = np.concatenate([z2g, z2a], axis=1)
        asset, dec_cache = decode_views(self.decoder, latent, cameras)
        cache = {
            "c1g": c1g, "c1a": c1a, "cx1": cx1,
            "c2g": c2g, "c2a": c2a, "cx2": cx2,
            "dec": dec_cache,
        }
        return asset, cache

    def backward(self, cache, render_grads: RenderGradients) -> dict:
        """Chain rendered-primitive gradients into trainable parameters."""
        d_latent, dec_grads = decode_backward(self.decoder, cache["dec"],
                                              render_grads)
        c = self.channels
        d_z2g = d_latent[:, :c]
        d_z2a = d_latent[:, c:]

        d_y2g_p, d_y2a_p, gx2 = branch_exchange_backward(
            self.zc["x2_ag"], self.zc["x2_ga"], cache["cx2"], d_z2g, d_z2a)
        d_z1g, _, _, g2g = block_adapter_backward(
            self.block2_g, self.zc["w2g_res"], self.zc["w2g_out"],
            cache["c2g"], d_y2g_p)
        d_z1a, _, _, g2a = block_adapter_backward(
            self.block2_a, self.zc["w2a_res"], self.zc["w2a_out"],
            cache["c2a"], d_y2a_p)

        d_y1g_p, d_y1a_p, gx1 = branch_exchange_backward(
            self.zc["x1_ag"], self.zc["x1_ga"], cache["cx1"], d_z1g, d_z1a)
        _, _, _, g1g = block_adapter_backward(
            self.block1_g, None, self.zc["w1g_out"], cache["c1g"], d_y1g_p)
        _, _, _, g1a = block_adapter_backward(
            self.block1_a, None, self.zc["w1a_out"], cache["c1a"], d_y1a_p)

        grads = {}
        for prefix, g in (("w1g", g1g), ("w1a", g1a), ("w2g", g2g),
                          ("w2a", g2a)):
            grads[f"{prefix}_out_w"] = g["zc_out_w"]
            grads[f"{prefix}_out_b"] = g["zc_out_b"]
            if "zc_res_w" in g:
                grads[f"{prefix}_res_w"] = g["zc_res_w"]
                grads[f"{prefix}_res_b"] = g["zc_res_b"]
        grads["x1_ag_w"] = gx1["zc_ab_w"]
        grads["x1_ag_b"] = gx1["zc_ab_b"]
        grads["x1_ga_w"] = gx1["zc_ba_w"]
        grads["x1_ga_b"] = gx1["zc_ba_b"]
        grads["x2_ag_w"] = gx2["zc_ab_w"]
        grads["x2_ag_b"] = gx2["zc_ab_b"]
        grads["x2_ga_w"] = gx2["zc_ba_w"]
        grads["x2_ga_b"] = gx2["zc_ba_b"]
        for name, arr in dec_grads.items():
            grads[f"dec_{name}"] = arr
        return grads


@dataclass
class AdapterTrainer:
    """Single-scene toy training driver."""

    pipeline: AdapterPipeline
    targets: list[GBufferTarget]
    cameras: list[Camera]
    inputs: dict  # fixed stand-in features: x_g, x_a, skip_g, skip_a, cond
    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 2e-3
    seed: int = 0
    iters_per_epoch: int = 100

    def __post_init__(self):
        self.adam = AdamState()
        self.rng = np.random.default_rng(self.seed)
        self._theta = self.pipeline.frozen_checksum()

    def loss_only(self) -> LossBreakdown:
        asset, _ = self.pipeline.forward(
            self.inputs["x_g"], self.inputs["x_a"], self.inputs["skip_g"],
            self.inputs["skip_a"], self.inputs["cond"], self.cameras)
        return self._losses(asset, np.full(3, 0.5), 0, with_grads=False)[0]

    def _losses(self, asset: SplatterAsset, bg, epoch, with_grads=True):
        breakdown = LossBreakdown()
        total_grads = None
        w = self.weights
        scene_grads = []
        for tgt, cam in zip(self.targets, self.cameras):
            out = rasterize(asset, cam, background=bg)
            img_grads = {}
            gt_rgb = tgt.rgb + (1 - tgt.alpha[..., None]) * bg
            parts, _, g_rgb = color_loss(out.rgb, gt_rgb, w)
            breakdown.color_mse += parts["color_mse"]
            breakdown.color_ssim += parts["color_ssim"]
            img_grads["rgb"] = g_rgb
            gt_alb = tgt.albedo + (1 - tgt.alpha[..., None]) * bg
            parts_a, _, g_alb = color_loss(out.albedo, gt_alb, w)
            breakdown.color_mse += parts_a["color_mse"]
            breakdown.color_ssim += parts_a["color_ssim"]
            img_grads["albedo"] = g_alb
            v_a, g_a = alpha_loss(out.alpha, tgt.alpha)
            breakdown.alpha_bce += w.alpha * v_a
            img_grads["alpha"] = w.alpha * g_a
            v_m, g_m, g_r = material_loss(out.metallic, out.roughness,
                                          tgt.metallic, tgt.roughness,
                                          tgt.alpha)
            breakdown.material_mse += w.material * v_m
            img_grads["metallic"] = w.material * g_m
            img_grads["roughness"] = w.material * g_r
            w_dist = w.distortion(epoch)
            if with_grads:
                v_d, g_d = depth_distortion(out)
                grads = rasterize_backward(out, img_grads)
                grads.add_(g_d.scaled(w_dist))
                scene_grads.append(grads)
            else:
                v_d, _ = depth_distortion(out, with_grads=False)
            breakdown.distortion += w_dist * v_d
        if with_grads:
            total_grads = scene_grads[0]
            for g in scene_grads[1:]:
                total_grads.add_(g)
        return breakdown, total_grads

    def step(self, iteration: int) -> LossBreakdown:
        bg = self.rng.uniform(0, 1, 3)
        asset, cache = self.pipeline.forward(
            self.inputs["x_g"], self.inputs["x_a"], self.inputs["skip_g"],
            self.inputs["skip_a"], self.inputs["cond"], self.cameras)
        epoch = iteration // self.iters_per_epoch
        breakdown, render_grads = self._losses(asset, bg, epoch)
        param_grads = self.pipeline.backward(cache, render_grads)
        params = self.pipeline.trainable_parameters()
        lrs = {k: self.learning_rate for k in params}
        self.adam.step(params, param_grads, lrs)
        if self.pipeline.frozen_checksum() != self._theta:
            raise AssertionError("frozen parameters changed during training")
        return breakdown

    def run(self, iterations: int):
        history = []
        for it in range(iterations):
            history.append(self.step(it))
        return history


def make_stand_in_inputs(channels: int, cond_channels: int, h: int, w: int,
                         n_views: int, seed: int = 0) -> dict:
    """Seeded feature maps standing in for upstream network activations."""
    rng = np.random.default_rng(seed)
    return {
        "x_g": rng.normal(size=(n_views, channels, h, w)),
        "x_a": rng.normal(size=(n_views, channels, h, w)),
        "skip_g": rng.normal(size=(n_views, channels, h, w)),
        "skip_a": rng.normal(size=(n_views, channels, h, w)),
        "cond": rng.normal(size=(n_views, cond_channels, h, w)),
    }


# ---------------------------------------------------------------------------
# checkpoint container

_CKPT_MAGIC = b"SFCKPT1\n"


def save_checkpoint(path, pipeline: AdapterPipeline) -> None:
    params = pipeline.trainable_parameters()
    header = {
        "theta_checksum": pipeline.frozen_checksum(),
        "arrays": {k: list(v.shape) for k, v in params.items()},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(str(path), "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<q", len(blob)))
        f.write(blob)
        for k in sorted(params):
            f.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())


def load_checkpoint(path, pipeline: AdapterPipeline) -> None:
    """Load trainable parameters; refuses a mismatched frozen checksum."""
    with open(str(path), "rb") as f:
        if f.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise SchemaError("not a splatforge adapter checkpoint")
        (n,) = struct.unpack("<q", f.read(8))
        header = json.loads(f.read(n).decode())
        if header["theta_checksum"] != pipeline.frozen_checksum():
            raise SchemaError(
                "checkpoint was trained against different frozen parameters")
        params = pipeline.trainable_parameters()
        for k in sorted(header["arrays"]):
            shape = tuple(header["arrays"][k])
            count = int(np.prod(shape))
            data = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape)
            if k not in params or params[k].shape != shape:
                raise SchemaError(f"checkpoint array {k} does not fit pipeline")
            params[k][...] = data
