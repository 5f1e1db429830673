"""GGX microfacet BRDF: distribution, height-correlated Smith visibility,
Schlick Fresnel, importance sampling, and the split-sum DFG table.

Conventions: alpha = roughness^2, F0 = mix(0.04, albedo, metallic). The DFG
table stores (scale, bias) so that the pre-integrated specular term is
F0 * scale + bias.
"""

from __future__ import annotations

import numpy as np

MIN_ALPHA = 1e-4
MIN_COS = 1e-6


def ggx_distribution(cos_nh: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    a2 = alpha * alpha
    c = np.clip(cos_nh, 0.0, 1.0)
    denom = c * c * (a2 - 1.0) + 1.0
    return a2 / np.maximum(np.pi * denom * denom, 1e-300)


def smith_visibility(cos_nv: np.ndarray, cos_nl: np.ndarray,
                     alpha: np.ndarray) -> np.ndarray:
    """Height-correlated Smith V = G / (4 (n.v)(n.l))."""
    a2 = alpha * alpha
    nv = np.maximum(cos_nv, MIN_COS)
    nl = np.maximum(cos_nl, MIN_COS)
    lv = nl * np.sqrt(a2 + (1.0 - a2) * nv * nv)
    ll = nv * np.sqrt(a2 + (1.0 - a2) * nl * nl)
    return 0.5 / np.maximum(lv + ll, 1e-300)


def fresnel_schlick(cos_vh: np.ndarray, f0):
    c = np.clip(cos_vh, 0.0, 1.0)
    pow5 = (1.0 - c) ** 5
    return f0 + (1.0 - f0) * pow5


def hammersley(n: int) -> np.ndarray:
    """Deterministic 2D low-discrepancy points, (n, 2) in [0, 1)^2."""
    i = np.arange(n, dtype=np.uint32)
    bits = i.copy()
    bits = ((bits << np.uint32(16)) | (bits >> np.uint32(16))) & np.uint32(0xFFFFFFFF)
    bits = ((bits & np.uint32(0x55555555)) << np.uint32(1)) | (
        (bits & np.uint32(0xAAAAAAAA)) >> np.uint32(1))
    bits = ((bits & np.uint32(0x33333333)) << np.uint32(2)) | (
        (bits & np.uint32(0xCCCCCCCC)) >> np.uint32(2))
    bits = ((bits & np.uint32(0x0F0F0F0F)) << np.uint32(4)) | (
        (bits & np.uint32(0xF0F0F0F0)) >> np.uint32(4))
    bits = ((bits & np.uint32(0x00FF00FF)) << np.uint32(8)) | (
        (bits & np.uint32(0xFF00FF00)) >> np.uint32(8))
    radical = bits.astype(np.float64) * 2.3283064365386963e-10
    return np.stack([(i.astype(np.float64) + 0.5) / n, radical], axis=-1)


def ggx_sample_halfvector(u: np.ndarray, alpha: float) -> np.ndarray:
    """Sample h ~ D(h) cos(h) in the local frame (n = +z), (..., 2) -> (..., 3)."""
    a = max(alpha, MIN_ALPHA)
    phi = 2.0 * np.pi * u[..., 0]
    cos2 = (1.0 - u[..., 1]) / (1.0 + (a * a - 1.0) * u[..., 1])
    cos_t = np.sqrt(np.clip(cos2, 0.0, 1.0))
    sin_t = np.sqrt(np.clip(1.0 - cos2, 0.0, 1.0))
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def ggx_half_pdf(cos_nh: np.ndarray, cos_vh: np.ndarray, alpha: float) -> np.ndarray:
    """pdf of the reflected direction under ggx_sample_halfvector."""
    return ggx_distribution(cos_nh, np.asarray(alpha)) * np.clip(cos_nh, 0, 1) / np.maximum(
        4.0 * np.abs(cos_vh), 1e-300)


def orthonormal_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Branchless tangent frame (t1, t2) for unit normals (..., 3)."""
    n = np.asarray(n, dtype=np.float64)
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t1 = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]],
                  axis=-1)
    t2 = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t1, t2


def integrate_dfg(n_v: float, roughness: float, samples: int = 1024) -> tuple[float, float]:
    """Split-sum BRDF integral (scale, bias) for one (n.v, roughness) pair."""
    nv = max(float(n_v), MIN_COS)
    alpha = max(roughness * roughness, MIN_ALPHA)
    v = np.array([np.sqrt(max(1.0 - nv * nv, 0.0)), 0.0, nv])
    h = ggx_sample_halfvector(hammersley(samples), alpha)
    vh = h @ v
    l = 2.0 * vh[:, None] * h - v
    nl = l[:, 2]
    nh = h[:, 2]
    keep = nl > 0
    vis = smith_visibility(nv, nl[keep], np.asarray(alpha))
    # f cos / pdf with pdf = D nh / (4 vh): the D cancels, leaving
    # 4 V (v.h) (n.l) / (n.h)
    w = 4.0 * vis * np.abs(vh[keep]) * nl[keep] / np.maximum(nh[keep], 1e-12)
    fc = (1.0 - np.clip(vh[keep], 0.0, 1.0)) ** 5
    scale = float(np.sum((1.0 - fc) * w)) / samples
    bias = float(np.sum(fc * w)) / samples
    return scale, bias


def build_dfg_lut(res: int = 64, samples: int = 1024) -> np.ndarray:
    """(res, res, 2) table over (n.v, roughness) -> (scale, bias)."""
    lut = np.zeros((res, res, 2))
    coords = (np.arange(res) + 0.5) / res
    for i, nv in enumerate(coords):
        for j, r in enumerate(coords):
            lut[i, j] = integrate_dfg(nv, r, samples)
    return lut


def sample_dfg(lut: np.ndarray, n_v: np.ndarray, roughness: np.ndarray,
               with_grad: bool = False):
    """Bilinear lookup of (scale, bias); optional d/d(n.v) and d/d(roughness)."""
    res = lut.shape[0]
    x = np.clip(np.asarray(n_v, dtype=np.float64), 0.0, 1.0) * res - 0.5
    y = np.clip(np.asarray(roughness, dtype=np.float64), 0.0, 1.0) * res - 0.5
    x0 = np.clip(np.floor(x).astype(np.int64), 0, res - 2)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, res - 2)
    fx = np.clip(x - x0, 0.0, 1.0)
    fy = np.clip(y - y0, 0.0, 1.0)
    v00 = lut[x0, y0]
    v10 = lut[x0 + 1, y0]
    v01 = lut[x0, y0 + 1]
    v11 = lut[x0 + 1, y0 + 1]
    fx_ = fx[..., None]
    fy_ = fy[..., None]
    val = (v00 * (1 - fx_) * (1 - fy_) + v10 * fx_ * (1 - fy_)
           + v01 * (1 - fx_) * fy_ + v11 * fx_ * fy_)
    if not with_grad:
        return val
    inside_x = ((x > 0) & (x < res - 1)).astype(np.float64) * res
    inside_y = ((y > 0) & (y < res - 1)).astype(np.float64) * res
    d_nv = ((v10 - v00) * (1 - fy_) + (v11 - v01) * fy_) * inside_x[..., None]
    d_r = ((v01 - v00) * (1 - fx_) + (v11 - v10) * fx_) * inside_y[..., None]
    return val, d_nv, d_r
