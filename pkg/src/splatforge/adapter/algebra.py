"""Zero-init adapter algebra over frozen blocks.

block_adapter wraps a frozen block F with two zero convolutions:

  Y  = F(X_in, X_res, C)
  Y' = F(X_in, X_res + ZC_res(X_res), C) + ZC_out(Y)

so Y' == Y exactly while both convolutions are zero, and gradients reach only
the convolution parameters (F's parameters receive none by construction).
branch_exchange crosses two parallel branches the same way:

  Y'_g = Y_g + ZC(Y_a),   Y'_a = Y_a + ZC(Y_g)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SplatforgeError
from .blocks import FrozenBlock, ZeroConv


@dataclass
class FeatureMap:
    """C x H x W scalar field with a named role (input, skip, condition...)."""

    data: np.ndarray
    semantics: str = "feature"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim < 3 or min(self.data.shape[-3:]) <= 0:
            raise SplatforgeError("feature maps must be (..., C, H, W), all > 0")
        if not np.all(np.isfinite(self.data)):
            raise SplatforgeError("feature map contains non-finite values")


def block_adapter_forward(block: FrozenBlock, zc_res: ZeroConv | None,
                          zc_out: ZeroConv, x_in: np.ndarray,
                          x_res: np.ndarray | None = None,
                          cond: np.ndarray | None = None):
    """Returns (y, y_prime, cache). zc_res is None for middle blocks."""
    if block.c_res and x_res is None:
        raise SplatforgeError("block expects a skip input x_res")
    y, cache_base = block.forward(x_in, x_res, cond)
    if block.c_res:
        adapted_res, zc_res_cache = zc_res.forward(x_res)
        y_adapted, cache_adapted = block.forward(x_in, x_res + adapted_res, cond)
    else:
        zc_res_cache = None
        y_adapted, cache_adapted = block.forward(x_in, None, cond)
    zc_term, zc_out_cache = zc_out.forward(y)
    y_prime = y_adapted + zc_term
    cache = (block, cache_base, cache_adapted, zc_res_cache, zc_out_cache)
    return y, y_prime, cache


def block_adapter_backward(block: FrozenBlock, zc_res: ZeroConv | None,
                           zc_out: ZeroConv, cache, d_y_prime: np.ndarray,
                           d_y_extra: np.ndarray | None = None):
    """Backward through the wrapped block.

    d_y_extra carries gradients that reached the base output Y through other
    consumers. Returns (d_x_in, d_x_res, d_cond, grads); grads holds the
    zero-conv parameter gradients (zc_res_w/b when the block has a skip,
    always zc_out_w/b). Frozen parameters receive no gradient by design.
    """
    _, cache_base, cache_adapted, zc_res_cache, zc_out_cache = cache
    grads = {}

    # adapted F call
    d_x_in, d_res_adapted, d_cond = block.backward(cache_adapted, d_y_prime)

    # ZC_out(Y) path into the base F call
    d_y, grads["zc_out_w"], grads["zc_out_b"] = zc_out.backward(
        zc_out_cache, d_y_prime)
    if d_y_extra is not None:
        d_y = d_y + d_y_extra
    d_x_in_b, d_res_b, d_cond_b = block.backward(cache_base, d_y)
    d_x_in = d_x_in + d_x_in_b
    if d_cond is not None and d_cond_b is not None:
        d_cond = d_cond + d_cond_b

    d_x_res = None
    if block.c_res:
        d_res_zin, grads["zc_res_w"], grads["zc_res_b"] = zc_res.backward(
            zc_res_cache, d_res_adapted)
        d_x_res = d_res_adapted + d_res_zin
        if d_res_b is not None:
            d_x_res = d_x_res + d_res_b
    return d_x_in, d_x_res, d_cond, grads


def branch_exchange_forward(zc_ab: ZeroConv, zc_ba: ZeroConv,
                            y_a: np.ndarray, y_b: np.ndarray):
    """Y'_a = Y_a + ZC_ba(Y_b); Y'_b = Y_b + ZC_ab(Y_a)."""
    if y_a.shape[-2:] != y_b.shape[-2:]:
        raise SplatforgeError(
            f"branch spatial shapes differ: {y_a.shape} vs {y_b.shape}")
    from_b, cache_ba = zc_ba.forward(y_b)
    from_a, cache_ab = zc_ab.forward(y_a)
    return y_a + from_b, y_b + from_a, (cache_ab, cache_ba)


def branch_exchange_backward(zc_ab: ZeroConv, zc_ba: ZeroConv, cache,
                             d_ya_prime: np.ndarray, d_yb_prime: np.ndarray):
    """Returns (d_ya, d_yb, grads dict with zc_ab_w/b, zc_ba_w/b)."""
    cache_ab, cache_ba = cache
    d_yb_from_ba, d_ba_w, d_ba_b = zc_ba.backward(cache_ba, d_ya_prime)
    d_ya_from_ab, d_ab_w, d_ab_b = zc_ab.backward(cache_ab, d_yb_prime)
    grads = {"zc_ab_w": d_ab_w, "zc_ab_b": d_ab_b,
             "zc_ba_w": d_ba_w, "zc_ba_b": d_ba_b}
    return d_ya_prime + d_ya_from_ab, d_yb_prime + d_yb_from_ba, grads
