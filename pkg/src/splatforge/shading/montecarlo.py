"""Monte-Carlo reference for the full rendering-equation integral.

Test oracle: cosine-importance-sampled diffuse plus GGX-importance-sampled
specular, evaluated against the raw equirectangular radiance (no prefiltered
maps, no lookup tables). The material model couples the lobes: the diffuse
term is Lambert scaled by the complement of the specular directional albedo
at the view angle, which this estimator integrates itself with the same GGX
samples (the deferred path reads the equivalent quantity from its DFG table,
so the two routes approximate one BRDF through independent machinery).
"""

from __future__ import annotations

import numpy as np

from .brdf import (
    fresnel_schlick,
    ggx_sample_halfvector,
    orthonormal_basis,
    smith_visibility,
)
from .deferred import DIELECTRIC_F0
from .environment import equirect_sample


def mc_reference(
    normal,
    view,
    albedo,
    metallic,
    roughness,
    env: np.ndarray,
    samples: int = 8192,
    rng: np.random.Generator | None = None,
    occlusion: float = 0.0,
    irradiance: np.ndarray | None = None,
) -> np.ndarray:
    """Unbiased radiance estimate for a single shading point, (3,)."""
    if rng is None:
        rng = np.random.default_rng(adaptive_seed(normal, view))
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    v = np.asarray(view, dtype=np.float64)
    v = v / np.linalg.norm(v)
    a = np.asarray(albedo, dtype=np.float64).reshape(3)
    m = float(metallic)
    r = float(roughness)
    f0 = DIELECTRIC_F0 * (1.0 - m) + a * m
    t1, t2 = orthonormal_basis(n)

    # --- specular: GGX half-vector sampling; the same weights also estimate
    # the specular directional albedo that scales the coupled diffuse lobe
    alpha = max(r * r, 1e-4)
    hl = ggx_sample_halfvector(rng.random((samples, 2)), alpha)
    hw = hl[:, 0, None] * t1 + hl[:, 1, None] * t2 + hl[:, 2, None] * n
    vh = hw @ v
    l = 2.0 * vh[:, None] * hw - v
    nl = l @ n
    nv = max(float(n @ v), 1e-6)
    keep = (nl > 0) & (vh > 0)
    spec = np.zeros(3)
    spec_albedo = np.zeros(3)
    if np.any(keep):
        li = equirect_sample(env, l[keep])
        vis = smith_visibility(nv, nl[keep], np.asarray(alpha))
        fr = fresnel_schlick(vh[keep][:, None], f0)
        nh = np.maximum(hl[keep][:, 2], 1e-12)
        # f cos / pdf with pdf = D nh / (4 vh): D cancels
        w = (4.0 * vis * vh[keep] * nl[keep] / nh)[:, None]
        spec = np.sum(fr * w * li, axis=0) / samples
        spec_albedo = np.clip(np.sum(fr * w, axis=0) / samples, 0.0, 1.0)

    # --- diffuse: cosine hemisphere sampling of Lambert scaled by the
    # complement of the specular directional albedo
    u = rng.random((samples, 2))
    rad = np.sqrt(u[:, 0])
    phi = 2.0 * np.pi * u[:, 1]
    local = np.stack(
        [rad * np.cos(phi), rad * np.sin(phi), np.sqrt(1.0 - u[:, 0])], axis=-1
    )
    ld = local[:, 0, None] * t1 + local[:, 1, None] * t2 + local[:, 2, None] * n
    li = equirect_sample(env, ld)
    diffuse = (1.0 - m) * a * (1.0 - spec_albedo) * np.mean(li, axis=0)

    out = (1.0 - occlusion) * diffuse + spec
    if irradiance is not None:
        out = out + occlusion * np.asarray(irradiance, dtype=np.float64)
    return out


def adaptive_seed(normal, view) -> int:
    """Deterministic seed derived from the query geometry."""
    data = np.asarray(normal, dtype=np.float64).tobytes() + np.asarray(
        view, dtype=np.float64).tobytes()
    return int.from_bytes(data[:8], "little") % (2**32)
