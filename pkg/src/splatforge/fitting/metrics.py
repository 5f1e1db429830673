"""Evaluation metrics: PSNR, SSIM, material MSE, and the comparison-row
format (PSNR / SSIM / LPIPS / albedo PSNR / metallic MSE / roughness MSE,
with the LPIPS column emitted as n/a: it needs a pretrained network)."""

from __future__ import annotations

import numpy as np

from ..assets.types import Camera, GBufferTarget, SplatterAsset
from ..losses.ssim import ssim
from ..parallel import parallel_map
from ..raster import rasterize

PSNR_CAP = 99.0

METRIC_COLUMNS = ("PSNR", "SSIM", "LPIPS", "PSNR_albedo", "MSE_metallic",
                  "MSE_roughness")


def psnr(pred: np.ndarray, target: np.ndarray, cap: float = PSNR_CAP) -> float:
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - target) ** 2))
    if mse <= 10.0 ** (-cap / 10.0):
        return cap
    return min(cap, float(10.0 * np.log10(1.0 / mse)))


def evaluate(asset: SplatterAsset, targets: list[GBufferTarget],
             cameras: list[Camera], threads: int = 1) -> dict:
    """Render the asset against its targets and compute the metric row.

    Color metrics run over black-composited images; material MSEs are masked
    to the target foreground.
    """
    outs = parallel_map(
        lambda cam: rasterize(asset, cam, background=(0, 0, 0),
                              record_fragments=False),
        cameras, threads)
    rgb_pred = np.stack([o.rgb for o in outs])
    rgb_gt = np.stack([t.rgb for t in targets])
    alb_pred = np.stack([o.albedo for o in outs])
    alb_gt = np.stack([t.albedo for t in targets])

    ssim_vals = [ssim(o.rgb, t.rgb, with_grad=False)[0]
                 for o, t in zip(outs, targets)]

    mse_m = 0.0
    mse_r = 0.0
    count = 0
    for o, t in zip(outs, targets):
        mask = t.foreground()
        n = int(mask.sum())
        if n == 0:
            continue
        mse_m += float(np.sum((o.metallic[mask] - t.metallic[mask]) ** 2))
        mse_r += float(np.sum((o.roughness[mask] - t.roughness[mask]) ** 2))
        count += n
    count = max(count, 1)

    return {
        "PSNR": psnr(rgb_pred, rgb_gt),
        "SSIM": float(np.mean(ssim_vals)),
        "LPIPS": None,
        "PSNR_albedo": psnr(alb_pred, alb_gt),
        "MSE_metallic": mse_m / count,
        "MSE_roughness": mse_r / count,
    }


def metric_row(metrics: dict, label: str = "ours") -> str:
    """One comparison-table row; None renders as n/a."""
    cells = [label]
    for col in METRIC_COLUMNS:
        v = metrics.get(col)
        cells.append("n/a" if v is None else f"{v:.4g}")
    return "\t".join(cells)


def metric_header() -> str:
    return "\t".join(("method",) + METRIC_COLUMNS)
