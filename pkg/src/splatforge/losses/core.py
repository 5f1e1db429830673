"""Supervision losses: color (MSE + SSIM + optional perceptual hook), alpha
BCE, masked material MSE, and an optional masked depth L1. Every function
returns its scalar value(s) together with analytic gradient images."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..errors import SplatforgeError
from .ssim import ssim
from .weights import LossWeights

BCE_EPS = 1e-6


def mse_loss(pred: np.ndarray, target: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise SplatforgeError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    value = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return value, grad


def color_loss(
    pred: np.ndarray,
    target: np.ndarray,
    weights: LossWeights = LossWeights(),
    perceptual_hook: Optional[Callable] = None,
):
    """lambda_mse * MSE + lambda_ssim * (1 - SSIM) + optional perceptual term.

    perceptual_hook(pred, target) -> (value, grad) plugs in an external
    perceptual metric; without one the lambda_perceptual slot contributes 0.
    Returns (parts dict, total, gradient image).
    """
    mse_v, mse_g = mse_loss(pred, target)
    ssim_v, ssim_g = ssim(pred, target)
    parts = {
        "color_mse": weights.lambda_mse * mse_v,
        "color_ssim": weights.lambda_ssim * (1.0 - ssim_v),
        "color_perceptual": 0.0,
    }
    grad = weights.lambda_mse * mse_g - weights.lambda_ssim * ssim_g
    if perceptual_hook is not None:
        p_v, p_g = perceptual_hook(pred, target)
        parts["color_perceptual"] = weights.lambda_perceptual * p_v
        grad = grad + weights.lambda_perceptual * p_g
    total = sum(parts.values())
    return parts, total, grad


def alpha_loss(pred_alpha: np.ndarray, target_alpha: np.ndarray):
    """Mean binary cross-entropy; predictions clamped to [eps, 1 - eps]."""
    pred = np.asarray(pred_alpha, dtype=np.float64)
    target = np.asarray(target_alpha, dtype=np.float64)
    if pred.shape != target.shape:
        raise SplatforgeError("alpha loss shape mismatch")
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    value = float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log1p(-p))))
    inside = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    grad = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0) / p.size
    return value, grad


def material_loss(pred_metallic, pred_roughness, gt_metallic, gt_roughness,
                  gt_alpha):
    """Foreground-masked MSE on metallic and roughness maps.

    Background materials are undefined, so the mask is gt alpha > 0.5.
    Returns (value, grad_metallic, grad_roughness).
    """
    mask = np.asarray(gt_alpha, dtype=np.float64) > 0.5
    n = max(int(mask.sum()), 1)
    value = 0.0
    grads = []
    for pred, gt in ((pred_metallic, gt_metallic), (pred_roughness, gt_roughness)):
        diff = np.where(mask, np.asarray(pred, dtype=np.float64) - gt, 0.0)
        value += float(np.sum(diff * diff)) / n
        grads.append(2.0 * diff / n)
    return value, grads[0], grads[1]


def depth_loss(pred_depth, gt_depth, gt_alpha):
    """Optional masked L1 on ray-distance depth (disabled by default)."""
    mask = np.asarray(gt_alpha, dtype=np.float64) > 0.5
    n = max(int(mask.sum()), 1)
    diff = np.where(mask, np.asarray(pred_depth, dtype=np.float64) - gt_depth, 0.0)
    value = float(np.sum(np.abs(diff))) / n
    grad = np.sign(diff) / n
    return value, grad
