"""Environment-light recovery from shaded images with known G-buffers.

The prefilter chain and every shading lookup are linear in the radiance
texels, so shading a pixel is an inner product between a fixed row (built
from the recorded prefilter taps and the pixel's lookup taps) and the
flattened environment. Recovery accumulates the per-channel normal equations
over foreground pixels and runs Adam on log-radiance (positivity by
construction), then reports the PSNR between fully re-shaded images and the
targets; callers apply the quality threshold (35 dB) to decide acceptance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assets.types import Camera, GBufferTarget
from ..errors import FitError
from ..shading.brdf import sample_dfg
from ..shading.deferred import DIELECTRIC_F0, ShadeInputs, shade_deferred
from ..shading.environment import (
    EnvironmentLight,
    PrefilterParams,
    cube_taps,
    equirect_taps,
    mip_face_sizes,
    prefilter,
)
from .metrics import psnr

RECOVERY_PARAMS = PrefilterParams(cube_res=32, mip_count=5, lut_res=64,
                                  spec_samples=512, lut_samples=1024,
                                  irr_res=(16, 32), irr_source_rows=16)


@dataclass(frozen=True)
class LightingRecoveryConfig:
    env_shape: tuple[int, int] = (16, 32)
    iterations: int = 2000
    learning_rate: float = 0.05
    max_pixels_per_view: int = 3000
    seed: int = 0
    params: PrefilterParams = field(default_factory=lambda: RECOVERY_PARAMS)
    recover_occlusion: bool = False
    occlusion_iterations: int = 300


@dataclass
class LightingRecovery:
    light: EnvironmentLight
    radiance: np.ndarray  # (h, w, 3) recovered equirect
    psnr: float
    converged: bool
    occlusion: list | None = None
    irradiance: list | None = None


def _pixel_rows(tgt: GBufferTarget, cam: Camera, ops, params, max_pixels):
    """Per-pixel shading rows: (row_d, row_s, coeff_d, coeff_s, gt slots)."""
    fg = tgt.foreground()
    idx = np.flatnonzero(fg.reshape(-1))
    if len(idx) == 0:
        return None
    if len(idx) > max_pixels:  # deterministic stride subsample
        idx = idx[np.linspace(0, len(idx) - 1, max_pixels).astype(np.int64)]
    h, w = tgt.shape
    rows_sel = idx // w
    cols_sel = idx % w

    n = tgt.normal[rows_sel, cols_sel]
    if tgt.normal_frame == "camera":
        n = n @ cam.rotation_w_from_c.T
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    rays = cam.pixel_rays()[rows_sel, cols_sel]
    v = -rays
    alb = tgt.albedo[rows_sel, cols_sel]
    met = tgt.metallic[rows_sel, cols_sel]
    rough = tgt.roughness[rows_sel, cols_sel]
    occ = (np.zeros(len(idx)) if tgt.occlusion is None
           else tgt.occlusion[rows_sel, cols_sel])
    iirr = (np.zeros((len(idx), 3)) if tgt.irradiance is None
            else tgt.irradiance[rows_sel, cols_sel])

    nv = np.clip(np.einsum("nc,nc->n", n, v), 1e-4, 1.0)
    refl = 2.0 * nv[:, None] * n - v
    alpha_ggx = rough * rough
    k_dom = (1.0 - alpha_ggx) ** 2
    raw = (1.0 - k_dom)[:, None] * n + k_dom[:, None] * refl
    lookup = raw / np.linalg.norm(raw, axis=-1, keepdims=True)

    # DFG table comes from the operator light (env-independent)
    ab = sample_dfg(ops["dfg"], nv, rough)
    f0 = DIELECTRIC_F0 * (1.0 - met)[:, None] + alb * met[:, None]
    s_spec = f0 * ab[:, 0:1] + ab[:, 1:2]
    kd = (1.0 - met)[:, None] * (1.0 - s_spec)
    coeff_d = (1.0 - occ)[:, None] * kd * alb  # multiplies Irr(n)
    coeff_s = s_spec  # multiplies SpecMip(lookup, rough)

    ih, iw = params.irr_res
    tidx, tw = equirect_taps(ih, iw, n)
    row_d = np.einsum("nt,ntk->nk", tw, ops["irr"][tidx])

    sizes = mip_face_sizes(params)
    kmips = len(sizes)
    pos = np.clip(rough, 0, 1) * (kmips - 1)
    lo = np.clip(np.floor(pos).astype(np.int64), 0, kmips - 2)
    frac = pos - lo
    row_s = np.zeros_like(row_d)
    for level in range(kmips):
        wl = np.where(lo == level, 1.0 - frac, np.where(lo + 1 == level, frac, 0.0))
        sel = wl > 0
        if not sel.any():
            continue
        cidx, cw = cube_taps(sizes[level], lookup[sel])
        row_s[sel] += wl[sel][:, None] * np.einsum(
            "nt,ntk->nk", cw, ops["mips"][level][cidx])

    gt = tgt.rgb[rows_sel, cols_sel]
    offset = occ[:, None] * iirr  # light-independent additive term
    return row_d, row_s, coeff_d, coeff_s, gt - offset


def recover_lighting(
    targets: list[GBufferTarget],
    cameras: list[Camera],
    config: LightingRecoveryConfig = LightingRecoveryConfig(),
) -> LightingRecovery:
    """Recover a low-resolution environment so shaded G-buffers match targets."""
    if not any(t.foreground().any() for t in targets):
        raise FitError("all targets are background: nothing to recover")
    eh, ew = config.env_shape
    n_env = eh * ew
    params = config.params
    if params.irr_source_rows < eh:
        raise FitError("irr_source_rows must cover the recovered env rows")

    probe = prefilter(np.ones((eh, ew, 3)), params, record_operator=True)
    ops = {
        "irr": probe.operator.irradiance,
        "mips": probe.operator.mips,
        "dfg": probe.dfg_lut,
    }

    ata = np.zeros((3, n_env, n_env))
    atb = np.zeros((3, n_env))
    b_norm = 0.0
    n_rows = 0
    for tgt, cam in zip(targets, cameras):
        got = _pixel_rows(tgt, cam, ops, params, config.max_pixels_per_view)
        if got is None:
            continue
        row_d, row_s, coeff_d, coeff_s, gt = got
        for ch in range(3):
            rows = coeff_d[:, ch:ch + 1] * row_d + coeff_s[:, ch:ch + 1] * row_s
            ata[ch] += rows.T @ rows
            atb[ch] += rows.T @ gt[:, ch]
            b_norm += float(np.sum(gt[:, ch] ** 2))
        n_rows += len(gt) * 3

    signal = float(np.trace(ata.sum(axis=0)))
    if signal < 1e-9 or n_rows == 0:
        return LightingRecovery(
            light=probe, radiance=np.ones((eh, ew, 3)), psnr=0.0,
            converged=False,
        )

    # Adam on log-radiance: quadratic objective per channel
    u = np.zeros((n_env, 3))
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for t in range(1, config.iterations + 1):
        x = np.exp(u)
        g_x = np.stack([2.0 * (ata[ch] @ x[:, ch] - atb[ch]) / max(n_rows, 1)
                        for ch in range(3)], axis=1)
        g = g_x * x
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1**t)
        vh = v / (1 - beta2**t)
        u -= config.learning_rate * mh / (np.sqrt(vh) + eps)
    radiance = np.exp(u).reshape(eh, ew, 3)

    light = prefilter(radiance, params)
    preds = []
    gts = []
    for tgt, cam in zip(targets, cameras):
        n = tgt.normal
        if tgt.normal_frame == "camera":
            n = n @ cam.rotation_w_from_c.T
        inputs = ShadeInputs(
            normal=n, view_dir=-cam.pixel_rays(), albedo=tgt.albedo,
            metallic=tgt.metallic, roughness=tgt.roughness, alpha=tgt.alpha,
            occlusion=tgt.occlusion, irradiance_override=tgt.irradiance,
        )
        shaded, _ = shade_deferred(inputs, light)
        preds.append(shaded)
        gts.append(tgt.rgb)
    value = psnr(np.stack(preds), np.stack(gts))

    # quadratic optimum check: converged iff the normal-equation residual is
    # small relative to the target energy
    x = radiance.reshape(-1, 3)
    res = sum(float(np.sum((ata[ch] @ x[:, ch] - atb[ch]) ** 2))
              for ch in range(3))
    converged = res <= 1e-6 * max(b_norm, 1e-12) and value > 5.0

    occ_maps = irr_maps = None
    if config.recover_occlusion:
        occ_maps, irr_maps = _recover_view_maps(targets, cameras, light,
                                                config)
    return LightingRecovery(light=light, radiance=radiance, psnr=value,
                            converged=converged, occlusion=occ_maps,
                            irradiance=irr_maps)


def _recover_view_maps(targets, cameras, light, config):
    """Optional per-view occlusion / indirect maps, env held fixed.

    Fits pred = (1 - I_o) D + I_o I_irr + S per foreground pixel with Adam on
    (logit I_o, log I_irr). A best-effort option: the reference preprocessing
    for these maps is not specified, so no fidelity beyond the residual drop
    is claimed.
    """
    occ_out, irr_out = [], []
    for tgt, cam in zip(targets, cameras):
        n = tgt.normal
        if tgt.normal_frame == "camera":
            n = n @ cam.rotation_w_from_c.T
        base = ShadeInputs(
            normal=n, view_dir=-cam.pixel_rays(), albedo=tgt.albedo,
            metallic=tgt.metallic, roughness=tgt.roughness, alpha=tgt.alpha,
        )
        full, _ = shade_deferred(base, light)
        dark_in = ShadeInputs(
            normal=n, view_dir=-cam.pixel_rays(), albedo=tgt.albedo,
            metallic=tgt.metallic, roughness=tgt.roughness, alpha=tgt.alpha,
            occlusion=np.ones_like(tgt.alpha),
        )
        spec_only, _ = shade_deferred(dark_in, light)
        diff = full - spec_only  # the (1 - I_o)-scaled diffuse component
        fg = tgt.foreground()

        u_occ = np.full(tgt.shape, -2.0)
        u_irr = np.full(tgt.shape + (3,), -2.0)
        m1 = np.zeros_like(u_occ)
        v1 = np.zeros_like(u_occ)
        m2 = np.zeros_like(u_irr)
        v2 = np.zeros_like(u_irr)
        for t in range(1, config.occlusion_iterations + 1):
            io = 1.0 / (1.0 + np.exp(-u_occ))
            iirr = np.exp(u_irr)
            pred = (1.0 - io)[..., None] * diff + io[..., None] * iirr + spec_only
            r = np.where(fg[..., None], pred - tgt.rgb, 0.0)
            g_io = np.einsum("hwc,hwc->hw", r, iirr - diff) * io * (1 - io)
            g_irr = r * io[..., None] * iirr
            for u, g, m, v in ((u_occ, g_io, m1, v1), (u_irr, g_irr, m2, v2)):
                m *= 0.9
                m += 0.1 * g
                v *= 0.999
                v += 0.001 * g * g
                u -= 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        occ_out.append(np.where(fg, 1.0 / (1.0 + np.exp(-u_occ)), 0.0))
        irr_out.append(np.where(fg[..., None], np.exp(u_irr), 0.0))
    return occ_out, irr_out
