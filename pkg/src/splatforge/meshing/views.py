"""Fusion-view rendering: circular orbits at three fixed elevations plus top
and bottom views, producing (albedo, depth, alpha) plus normals for later
remeshing targets."""

from __future__ import annotations

import numpy as np

from ..assets.types import Camera, SplatterAsset
from ..parallel import parallel_map
from ..raster import rasterize
from .mesh_raster import render_mesh

FUSION_ELEVATIONS_DEG = (10.0, 15.0, 20.0)


def fusion_cameras(
    bounds,
    azimuths_per_orbit: int = 24,
    resolution: tuple[int, int] = (96, 96),
    fov_y: float = 0.7,
    radius_factor: float = 1.35,
) -> list[Camera]:
    """3 orbits x N azimuths + top + bottom = 3 N + 2 cameras."""
    center = bounds.center
    radius = radius_factor * bounds.radius / np.tan(0.5 * fov_y)
    cams = []
    from ..fixtures import orbit_cameras

    for el in FUSION_ELEVATIONS_DEG:
        az = np.arange(azimuths_per_orbit) / azimuths_per_orbit * 2.0 * np.pi
        cams += orbit_cameras(az, np.full(azimuths_per_orbit, el), radius,
                              fov_y, resolution, target=center)
    cams += orbit_cameras(np.array([0.0, 0.0]), np.array([89.0, -89.0]),
                          radius, fov_y, resolution, target=center)
    return cams


def render_fusion_views(asset: SplatterAsset, cameras=None,
                        azimuths_per_orbit: int = 24,
                        resolution: tuple[int, int] = (96, 96),
                        threads: int = 1):
    """(albedo, depth, alpha, normal) tuples for each fusion camera."""
    cams = cameras if cameras is not None else fusion_cameras(
        asset.bounds, azimuths_per_orbit, resolution)

    def one(cam):
        out = rasterize(asset, cam, background=(0, 0, 0),
                        record_fragments=False)
        nrm = out.normal
        n = np.linalg.norm(nrm, axis=-1, keepdims=True)
        unit = np.where(n > 1e-9, nrm / np.maximum(n, 1e-300), 0.0)
        return out.albedo, out.depth, out.alpha, unit

    return parallel_map(one, cams, threads), cams


def render_mesh_targets(vertices, faces, cameras, threads: int = 1):
    """(normal, alpha, depth) target maps rendered from a mesh."""

    def one(cam):
        r = render_mesh(vertices, faces, cam)
        return r.normal, r.alpha, r.depth

    return parallel_map(one, cameras, threads)
