"""Shared fixtures and reference oracles.

The brute-force renderer here is an independent per-pixel implementation of
the documented compositing model (same cutoff constants, straightforward
scalar math); it exists to cross-check the vectorized rasterizer and must not
import from it beyond the published constants.
"""

from __future__ import annotations

import numpy as np
import pytest

from splatforge.assets.rotation import rotation_matrix
from splatforge.assets.types import Bounds, Camera, PrimitiveGrid, SplatterAsset, look_at_camera
from splatforge.raster import PackedScene, rasterize
from splatforge.raster.forward import (
    G_CUTOFF,
    Q_CLAMP,
    RHO_MAX,
    T_EARLY_STOP,
    T_STOP_RAMP,
    TAPER_WIDTH,
)


def arrays_to_asset(arrays: dict, camera: Camera, bounds=None) -> SplatterAsset:
    n = len(arrays["opacity"])
    grid = PrimitiveGrid.from_flat(arrays, (1, n))
    if bounds is None:
        bounds = Bounds([-2.0, -2.0, -2.0], [2.0, 2.0, 2.0])
    return SplatterAsset(views=[grid], cameras=[camera], bounds=bounds)


def make_gradcheck_scene(seed: int, n: int = 8, res: int = 16, reject: bool = True):
    """Random scene resampled away from non-differentiable configurations.

    With reject=True this avoids edge-on splats (ray/plane t blows up, normal
    flip sign changes) and pixel fragment pairs nearly coincident in depth
    with non-negligible weights (front-to-back blending jumps when their order
    swaps). Gradients are exact a.e.; finite differences need a differentiable
    neighborhood. reject=False returns the first unconstrained draw.
    """
    rng = np.random.default_rng(seed)
    cam = look_at_camera(
        eye=[0, -2.5, 0.6], target=[0, 0, 0], fov_y=0.7,
        resolution=(res, res), near=0.05, far=10,
    )
    rays = cam.pixel_rays().reshape(-1, 3)
    for _ in range(200):
        rot = np.zeros((n, 3))
        for i in range(n):
            while True:
                cand = rng.normal(size=3) * 0.7
                if not reject:
                    rot[i] = cand
                    break
                if np.abs(rotation_matrix(cand)[:, 2] @ rays.T).min() > 0.12:
                    rot[i] = cand
                    break
        arrays = dict(
            position=rng.uniform(-0.5, 0.5, size=(n, 3)),
            rotation=rot,
            scale=rng.uniform(0.15, 0.5, size=(n, 2)),
            opacity=rng.uniform(0.2, 0.85, size=n),
            color=rng.uniform(0.1, 0.9, size=(n, 3)),
            albedo=rng.uniform(0.1, 0.9, size=(n, 3)),
            metallic=rng.uniform(0.1, 0.9, size=n),
            roughness=rng.uniform(0.1, 0.9, size=n),
        )
        if not reject:
            return cam, arrays
        out = rasterize(PackedScene.from_arrays(**arrays), cam,
                        background=(0.3, 0.25, 0.2))
        rec = out.fragments
        if rec.count == 0:
            continue
        same = rec.pixel[1:] == rec.pixel[:-1]
        close = same & (np.abs(np.diff(rec.t)) < 5e-4)
        prod = rec.q[1:] * rec.q[:-1] * rec.trans[:-1]
        if np.any(close & (prod > 1e-5)):
            continue
        return cam, arrays
    raise RuntimeError(f"no differentiable scene found for seed {seed}")


def _taper(rho: float) -> float:
    x = min(max((RHO_MAX - rho) / TAPER_WIDTH, 0.0), 1.0)
    return x * x * (3.0 - 2.0 * x)


def _stop(trans: float) -> float:
    x = min(max((trans - T_EARLY_STOP) / (T_STOP_RAMP - T_EARLY_STOP), 0.0), 1.0)
    return x * x * (3.0 - 2.0 * x)


def reference_render(arrays: dict, camera: Camera, background) -> dict:
    """Per-pixel brute-force evaluation of the documented compositing sum."""
    w, h = camera.resolution
    rays = camera.pixel_rays()
    origin = camera.origin
    bg = np.asarray(background, dtype=np.float64)
    mats = rotation_matrix(np.asarray(arrays["rotation"], dtype=np.float64))
    n = len(arrays["opacity"])

    out = {
        "rgb": np.zeros((h, w, 3)),
        "albedo": np.zeros((h, w, 3)),
        "alpha": np.zeros((h, w)),
        "metallic": np.zeros((h, w)),
        "roughness": np.zeros((h, w)),
        "depth": np.zeros((h, w)),
        "normal": np.zeros((h, w, 3)),
    }
    for py in range(h):
        for px in range(w):
            d = rays[py, px]
            frags = []
            for i in range(n):
                nrm = mats[i, :, 2]
                denom = float(d @ nrm)
                if abs(denom) <= 1e-12:
                    continue
                mu_rel = np.asarray(arrays["position"][i], dtype=np.float64) - origin
                t = float(mu_rel @ nrm) / denom
                if not (camera.near < t < camera.far):
                    continue
                delta = t * d - mu_rel
                u = float(delta @ mats[i, :, 0]) / arrays["scale"][i][0]
                v = float(delta @ mats[i, :, 1]) / arrays["scale"][i][1]
                rho = u * u + v * v
                if rho >= RHO_MAX:
                    continue
                g = np.exp(-0.5 * rho) * _taper(rho)
                frags.append((t, i, g))
            frags.sort(key=lambda f: (f[0], f[1]))
            trans = 1.0
            for t, i, g in frags:
                q = min(arrays["opacity"][i] * g, Q_CLAMP)
                wgt = q * trans * _stop(trans)
                nrm = mats[i, :, 2]
                if float(nrm @ d) > 0.0:
                    nrm = -nrm
                out["alpha"][py, px] += wgt
                out["rgb"][py, px] += wgt * np.asarray(arrays["color"][i])
                out["albedo"][py, px] += wgt * np.asarray(arrays["albedo"][i])
                out["metallic"][py, px] += wgt * arrays["metallic"][i]
                out["roughness"][py, px] += wgt * arrays["roughness"][i]
                out["depth"][py, px] += wgt * t
                out["normal"][py, px] += wgt * nrm
                trans *= 1.0 - q
            a = out["alpha"][py, px]
            out["rgb"][py, px] += (1.0 - a) * bg
            out["albedo"][py, px] += (1.0 - a) * bg
            out["depth"][py, px] = out["depth"][py, px] / a if a > 0 else 0.0
    return out


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
