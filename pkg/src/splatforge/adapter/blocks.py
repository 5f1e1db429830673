"""Adapter building blocks: zero-initialized 1x1 convolutions and frozen
residual feature blocks standing in for pretrained network layers.

A ZeroConv starts at exactly zero (weights and bias), so wrapping a frozen
block with it is a bitwise identity at initialization; training then grows
the adaptation from nothing. FrozenBlock parameters are seeded, fixed, and
checksummed: training must never touch them, and checkpoints refuse to load
against a different parameter set.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import nn_ops


@dataclass
class ZeroConv:
    """Trainable 1x1 convolution initialized to exact zero."""

    weight: np.ndarray  # (C_out, C_in)
    bias: np.ndarray  # (C_out,)

    @staticmethod
    def create(c_in: int, c_out: int) -> "ZeroConv":
        return ZeroConv(weight=np.zeros((c_out, c_in)), bias=np.zeros(c_out))

    @property
    def is_zero(self) -> bool:
        return not (self.weight.any() or self.bias.any())

    def forward(self, x: np.ndarray):
        return nn_ops.conv1x1(x, self.weight, self.bias), x

    def backward(self, cache: np.ndarray, d_out: np.ndarray):
        """Returns (d_x, d_weight, d_bias)."""
        return nn_ops.conv1x1_backward(cache, self.weight, d_out)


@dataclass
class FrozenBlock:
    """Fixed conv-tanh-conv residual map with optional skip concatenation.

    F(X_in, X_res, C) = X_in + W2 * tanh(W1 * concat(X_in, X_res?, C?)).
    Parameters are immutable after creation; gradients flow only to inputs.
    """

    w1: np.ndarray  # (hidden, C_total, 3, 3)
    b1: np.ndarray
    w2: np.ndarray  # (C_out, hidden, 3, 3)
    b2: np.ndarray
    c_in: int
    c_res: int  # 0 for middle-block variant (no skip input)
    c_cond: int

    @staticmethod
    def create(c_in: int, c_res: int = 0, c_cond: int = 0, hidden: int = 16,
               seed: int = 0) -> "FrozenBlock":
        rng = np.random.default_rng(seed)
        c_total = c_in + c_res + c_cond
        scale1 = 1.0 / np.sqrt(9 * c_total)
        scale2 = 1.0 / np.sqrt(9 * hidden)
        block = FrozenBlock(
            w1=rng.normal(0, scale1, (hidden, c_total, 3, 3)),
            b1=rng.normal(0, 0.01, hidden),
            w2=rng.normal(0, scale2, (c_in, hidden, 3, 3)),
            b2=rng.normal(0, 0.01, c_in),
            c_in=c_in, c_res=c_res, c_cond=c_cond,
        )
        for arr in (block.w1, block.b1, block.w2, block.b2):
            arr.setflags(write=False)
        return block

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for arr in (self.w1, self.b1, self.w2, self.b2):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()

    def forward(self, x_in: np.ndarray, x_res: np.ndarray | None = None,
                cond: np.ndarray | None = None):
        parts = [x_in]
        if self.c_res:
            parts.append(x_res)
        if self.c_cond:
            parts.append(cond)
        h = np.concatenate(parts, axis=-3)
        z1 = nn_ops.conv3x3(h, self.w1, self.b1)
        a1, tanh_cache = nn_ops.tanh_forward(z1)
        out = x_in + nn_ops.conv3x3(a1, self.w2, self.b2)
        return out, (h, tanh_cache)

    def backward(self, cache, d_out: np.ndarray):
        """Input gradients only (parameters frozen).

        Returns (d_x_in, d_x_res, d_cond); absent inputs give None.
        """
        h, tanh_cache = cache
        d_a1 = nn_ops.conv3x3_input_backward(self.w2, d_out)
        d_z1 = nn_ops.tanh_backward(tanh_cache, d_a1)
        d_h = nn_ops.conv3x3_input_backward(self.w1, d_z1)
        d_x_in = d_h[..., : self.c_in, :, :] + d_out
        pos = self.c_in
        d_x_res = None
        if self.c_res:
            d_x_res = d_h[..., pos : pos + self.c_res, :, :]
            pos += self.c_res
        d_cond = d_h[..., pos : pos + self.c_cond, :, :] if self.c_cond else None
        return d_x_in, d_x_res, d_cond
