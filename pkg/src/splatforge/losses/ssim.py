"""SSIM with analytic gradients.

Standard single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
C2 = 0.03^2, data range [0, 1]. Convolutions use zero padding and the mean is
taken over the interior region where windows are fully supported, so the
statistics match the textbook definition and the convolution operator is its
own adjoint (exact gradients).
"""

from __future__ import annotations

import numpy as np

from ..errors import SplatforgeError

WINDOW = 11
SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def _kernel() -> np.ndarray:
    r = WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / SIGMA) ** 2)
    return k / k.sum()


_K = _kernel()


def _blur(img: np.ndarray) -> np.ndarray:
    """Separable 'same' convolution with zero padding (self-adjoint)."""
    r = WINDOW // 2
    h, w = img.shape
    pad = np.zeros((h + 2 * r, w))
    pad[r : r + h] = img
    tmp = np.zeros_like(img)
    for i, kv in enumerate(_K):
        tmp += kv * pad[i : i + h]
    pad2 = np.zeros((h, w + 2 * r))
    pad2[:, r : r + w] = tmp
    out = np.zeros_like(img)
    for i, kv in enumerate(_K):
        out += kv * pad2[:, i : i + w]
    return out


def ssim(pred: np.ndarray, target: np.ndarray, with_grad: bool = True):
    """Mean SSIM over the valid interior; optionally d(mssim)/d(pred).

    Accepts (H, W) or (H, W, C); channels are averaged. Images must be at
    least WINDOW x WINDOW.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise SplatforgeError(f"ssim shape mismatch {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        pred = pred[..., None]
        target = target[..., None]
        squeeze = True
    else:
        squeeze = False
    h, w, nc = pred.shape
    if h < WINDOW or w < WINDOW:
        raise SplatforgeError(f"ssim needs images of at least {WINDOW}x{WINDOW}")

    r = WINDOW // 2
    interior = np.zeros((h, w))
    interior[r : h - r, r : w - r] = 1.0
    count = interior.sum() * nc

    total = 0.0
    grad = np.zeros_like(pred) if with_grad else None
    for c in range(nc):
        x = pred[..., c]
        y = target[..., c]
        p1 = _blur(x)
        p2 = _blur(y)
        p3 = _blur(x * x)
        p4 = _blur(y * y)
        p5 = _blur(x * y)
        a = 2.0 * p1 * p2 + C1
        b = 2.0 * (p5 - p1 * p2) + C2
        cc = p1 * p1 + p2 * p2 + C1
        d = p3 + p4 - p1 * p1 - p2 * p2 + C2
        s = (a * b) / (cc * d)
        total += float((s * interior).sum())
        if with_grad:
            m = interior / count
            inv = 1.0 / (cc * d)
            ds_dp1 = 2.0 * p2 * (b - a) * inv - 2.0 * p1 * s * (d - cc) * inv
            ds_dp3 = -s * cc * inv
            ds_dp5 = 2.0 * a * inv
            grad[..., c] = (
                _blur(m * ds_dp1)
                + 2.0 * x * _blur(m * ds_dp3)
                + y * _blur(m * ds_dp5)
            )
    mssim = total / count
    if not with_grad:
        return mssim, None
    if squeeze:
        grad = grad[..., 0]
    return mssim, grad
