"""Minimal NN primitives with hand-written backward passes.

Feature maps are (C, H, W) float64 arrays (a leading batch axis is handled by
the callers). Only 1x1 convolutions need weight gradients (every trainable
layer here is 1x1); 3x3 convolutions appear solely inside frozen blocks, so
they provide input gradients only.
"""

from __future__ import annotations

import numpy as np


def conv1x1(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """(..., C_in, H, W) x (C_out, C_in) + (C_out,) -> (..., C_out, H, W)."""
    out = np.einsum("oc,...chw->...ohw", weight, x)
    return out + bias.reshape((1,) * (out.ndim - 3) + (-1, 1, 1))


def conv1x1_backward(x: np.ndarray, weight: np.ndarray, d_out: np.ndarray):
    """Returns (d_x, d_weight, d_bias)."""
    d_x = np.einsum("oc,...ohw->...chw", weight, d_out)
    flat_do = d_out.reshape(-1, *d_out.shape[-3:])
    flat_x = x.reshape(-1, *x.shape[-3:])
    d_w = np.einsum("nohw,nchw->oc", flat_do, flat_x)
    d_b = flat_do.sum(axis=(0, 2, 3))
    return d_x, d_w, d_b


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(x, pad)


def conv3x3(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' 3x3 convolution, weight (C_out, C_in, 3, 3)."""
    h, w = x.shape[-2:]
    xp = _pad_hw(x, 1)
    out = None
    for dy in range(3):
        for dx in range(3):
            win = xp[..., dy : dy + h, dx : dx + w]
            term = np.einsum("oc,...chw->...ohw", weight[:, :, dy, dx], win)
            out = term if out is None else out + term
    return out + bias.reshape((1,) * (out.ndim - 3) + (-1, 1, 1))


def conv3x3_input_backward(weight: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    """d_x for the zero-padded 'same' 3x3 convolution (flipped-kernel corr)."""
    h, w = d_out.shape[-2:]
    dp = _pad_hw(d_out, 1)
    d_x = None
    for dy in range(3):
        for dx in range(3):
            win = dp[..., dy : dy + h, dx : dx + w]
            term = np.einsum("oc,...ohw->...chw",
                             weight[:, :, 2 - dy, 2 - dx], win)
            d_x = term if d_x is None else d_x + term
    return d_x


def tanh_forward(x: np.ndarray):
    y = np.tanh(x)
    return y, y


def tanh_backward(y: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    return d_out * (1.0 - y * y)


def pixel_shuffle(x: np.ndarray, factor: int) -> np.ndarray:
    """(..., C r^2, H, W) -> (..., C, H r, W r), sub-pixel rearrangement."""
    *lead, c2, h, w = x.shape
    r = factor
    c = c2 // (r * r)
    x = x.reshape(*lead, c, r, r, h, w)
    x = np.moveaxis(x, (-4, -3), (-2, -1))  # (..., c, h, w, r, r)
    x = x.transpose(*range(len(lead)), len(lead), len(lead) + 1,
                    len(lead) + 3, len(lead) + 2, len(lead) + 4)
    return x.reshape(*lead, c, h * r, w * r)


def pixel_shuffle_backward(d_out: np.ndarray, factor: int) -> np.ndarray:
    *lead, c, hr, wr = d_out.shape
    r = factor
    h, w = hr // r, wr // r
    x = d_out.reshape(*lead, c, h, r, w, r)
    x = x.transpose(*range(len(lead)), len(lead), len(lead) + 2,
                    len(lead) + 4, len(lead) + 1, len(lead) + 3)
    return x.reshape(*lead, c * r * r, h, w)
