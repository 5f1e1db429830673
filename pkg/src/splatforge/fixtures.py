"""Bundled synthetic fixtures: PBR spheres as splat assets, a dented cube
mesh, orbit camera rigs, and low-frequency HDR environments.

Everything here is deterministic (seeded), so acceptance runs are offline and
reproducible. Sphere assets are built by ray casting: one primitive per pixel
that hits the sphere, oriented along the surface normal, which makes the
rendered G-buffers well-posed supervision targets.
"""

from __future__ import annotations

import numpy as np

from .assets.rotation import frame_to_axis_angle
from .assets.types import (
    Bounds,
    Camera,
    GBufferTarget,
    PrimitiveGrid,
    SplatterAsset,
    TriangleMeshAsset,
    look_at_camera,
)
from .raster import rasterize
from .shading.deferred import ShadeInputs, shade_deferred
from .shading.environment import EnvironmentLight, equirect_texel_dirs


def orbit_cameras(
    azimuths: np.ndarray,
    elevations_deg: np.ndarray,
    radius: float,
    fov_y: float = 0.7,
    resolution: tuple[int, int] = (64, 64),
    target=(0.0, 0.0, 0.0),
) -> list[Camera]:
    """One camera per (azimuth, elevation) pair, +Z up."""
    cams = []
    for az, el in zip(np.atleast_1d(azimuths), np.atleast_1d(elevations_deg)):
        el_r = np.deg2rad(el)
        eye = np.asarray(target) + radius * np.array(
            [np.cos(el_r) * np.cos(az), np.cos(el_r) * np.sin(az), np.sin(el_r)]
        )
        cams.append(look_at_camera(eye=eye, target=target, fov_y=fov_y,
                                   resolution=resolution,
                                   near=0.05, far=radius * 4.0))
    return cams


def eight_view_cameras(radius: float = 2.4, fov_y: float = 0.7,
                       resolution: tuple[int, int] = (48, 48),
                       seed: int = 0) -> list[Camera]:
    """Four orthogonal views plus four random views around the object."""
    rng = np.random.default_rng(seed)
    az = list(np.deg2rad([0.0, 90.0, 180.0, 270.0]))
    el = [10.0, 10.0, 10.0, 10.0]
    az += list(rng.uniform(0, 2 * np.pi, 4))
    el += list(rng.uniform(-25.0, 40.0, 4))
    return orbit_cameras(np.array(az), np.array(el), radius, fov_y, resolution)


def _sphere_materials(points: np.ndarray, radius: float):
    """Deterministic PBR patterns over the sphere surface."""
    z = np.clip(points[..., 2] / radius, -1, 1)
    phi = np.arctan2(points[..., 1], points[..., 0])
    stripes = 0.5 + 0.5 * np.sign(np.sin(3.0 * phi))
    albedo = np.stack(
        [0.2 + 0.6 * stripes, 0.3 + 0.4 * (1 - stripes), 0.25 + 0.3 * (z + 1) / 2],
        axis=-1,
    )
    metallic = np.where(z > 0.35, 0.85, 0.05)
    roughness = 0.25 + 0.5 * (z + 1) / 2
    return albedo, metallic, roughness


def sphere_asset(
    cameras: list[Camera],
    radius: float = 0.5,
    center=(0.0, 0.0, 0.0),
    bounds_extent: float = 1.0,
    seed: int = 0,
    light: EnvironmentLight | None = None,
    scale_factor: float = 0.75,
) -> SplatterAsset:
    """Pixel-aligned sphere splats: one surfel per pixel whose ray hits.

    Color is either a fixed headlight shade of the albedo, or, when a light
    is supplied, the deferred-shaded radiance of the local G-buffer (which
    makes rendered color images consistent with shading the G-buffers).
    """
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=np.float64)
    bounds = Bounds(center - bounds_extent, center + bounds_extent)
    views = []
    for cam in cameras:
        w, h = cam.resolution
        rays = cam.pixel_rays()
        oc = cam.origin - center
        b = np.einsum("hwc,c->hw", rays, oc)
        disc = b * b - (oc @ oc - radius * radius)
        hit = disc > 0
        t = np.where(hit, -b - np.sqrt(np.maximum(disc, 0.0)), 0.0)
        hit &= t > 0
        points = cam.origin + rays * t[..., None]
        normals = np.where(hit[..., None],
                           (points - center) / radius, [0.0, 0.0, 1.0])

        up = np.where(np.abs(normals[..., 2:3]) < 0.99, [0.0, 0.0, 1.0],
                      [1.0, 0.0, 0.0])
        t1 = np.cross(up, normals)
        t1 /= np.maximum(np.linalg.norm(t1, axis=-1, keepdims=True), 1e-12)
        t2 = np.cross(normals, t1)
        rot = frame_to_axis_angle(t1.reshape(-1, 3), t2.reshape(-1, 3),
                                  normals.reshape(-1, 3)).reshape(h, w, 3)

        albedo, metallic, roughness = _sphere_materials(points - center, radius)
        pix_world = 2.0 * np.tan(0.5 * cam.fov_y) / h * np.maximum(t, 0.1)
        scale = np.repeat((pix_world * scale_factor)[..., None], 2, axis=-1)

        if light is not None:
            view = -rays
            inp = ShadeInputs(
                normal=normals, view_dir=view, albedo=albedo,
                metallic=metallic, roughness=roughness,
                alpha=hit.astype(np.float64),
            )
            color, _ = shade_deferred(inp, light)
            color = np.clip(color, 0.0, 1.0)
        else:
            lambert = np.clip(np.einsum("hwc,hwc->hw", normals, -rays), 0, 1)
            color = np.clip(albedo * (0.35 + 0.65 * lambert[..., None]), 0, 1)

        # misses: transparent filler primitives at random in-bounds positions
        miss = ~hit
        fill_pos = rng.uniform(center - 0.8 * bounds_extent,
                               center + 0.8 * bounds_extent,
                               size=(h, w, 3))
        position = np.where(hit[..., None], points, fill_pos)
        opacity = np.where(hit, 1.0, 0.0)
        scale = np.where(hit[..., None], scale, 0.01)

        views.append(PrimitiveGrid(
            position=position, rotation=rot, scale=scale, opacity=opacity,
            color=color, albedo=np.where(hit[..., None], albedo, 0.5),
            metallic=np.where(hit, metallic, 0.5),
            roughness=np.where(hit, roughness, 0.5),
        ))
    return SplatterAsset(views=views, cameras=cameras, bounds=bounds)


def targets_from_asset(asset: SplatterAsset,
                       cameras: list[Camera] | None = None
                       ) -> list[GBufferTarget]:
    """Render ground-truth G-buffers (over black) from an asset."""
    cams = cameras if cameras is not None else list(asset.cameras)
    targets = []
    for cam in cams:
        out = rasterize(asset, cam, background=(0.0, 0.0, 0.0),
                        record_fragments=False)
        norm = np.linalg.norm(out.normal, axis=-1, keepdims=True)
        unit = np.where(norm > 1e-9, out.normal / np.maximum(norm, 1e-300), 0.0)
        targets.append(GBufferTarget(
            rgb=out.rgb, albedo=out.albedo, alpha=out.alpha, normal=unit,
            depth=out.depth, metallic=out.metallic, roughness=out.roughness,
        ))
    return targets


def sphere_gbuffers(
    cameras: list[Camera],
    radius: float = 0.5,
    center=(0.0, 0.0, 0.0),
    light: EnvironmentLight | None = None,
) -> list[GBufferTarget]:
    """Analytic sphere G-buffers (exact unit normals, binary alpha).

    With a light supplied, rgb is the deferred-shaded radiance of the
    G-buffers themselves (over black), making the set an exact inverse-problem
    fixture for lighting recovery.
    """
    center = np.asarray(center, dtype=np.float64)
    targets = []
    for cam in cameras:
        rays = cam.pixel_rays()
        oc = cam.origin - center
        b = np.einsum("hwc,c->hw", rays, oc)
        disc = b * b - (oc @ oc - radius * radius)
        hit = disc > 0
        t = np.where(hit, -b - np.sqrt(np.maximum(disc, 0.0)), 0.0)
        hit &= t > 0
        points = cam.origin + rays * t[..., None]
        normals = np.where(hit[..., None], (points - center) / radius,
                           [0.0, 0.0, 1.0])
        albedo, metallic, roughness = _sphere_materials(points - center, radius)
        alpha = hit.astype(np.float64)
        albedo = np.where(hit[..., None], albedo, 0.0)
        metallic = np.where(hit, metallic, 0.0)
        roughness = np.where(hit, roughness, 0.0)
        if light is not None:
            inp = ShadeInputs(normal=normals, view_dir=-rays, albedo=albedo,
                              metallic=metallic, roughness=roughness,
                              alpha=alpha)
            rgb, _ = shade_deferred(inp, light)
        else:
            lam = np.clip(np.einsum("hwc,hwc->hw", normals, -rays), 0, 1)
            rgb = albedo * lam[..., None]
        targets.append(GBufferTarget(
            rgb=rgb, albedo=albedo, alpha=alpha,
            normal=np.where(hit[..., None], normals, 0.0),
            depth=np.where(hit, t, 0.0), metallic=metallic,
            roughness=roughness,
        ))
    return targets


def gradient_environment(h: int = 16, w: int = 32, seed: int = 0) -> np.ndarray:
    """Smooth low-frequency sky: vertical gradient plus a soft side lobe."""
    rng = np.random.default_rng(seed)
    dirs = equirect_texel_dirs(h, w)
    base = 0.4 + 0.3 * dirs[..., 2] + 0.2 * np.maximum(dirs[..., 0], 0.0)
    tint = np.array([1.0, 0.9, 0.8]) + 0.2 * rng.random(3)
    return np.clip(base[..., None] * tint, 0.01, None)


def probe_environment(h: int = 64, w: int = 128, seed: int = 1) -> np.ndarray:
    """Higher-resolution environment with a bright localized source."""
    rng = np.random.default_rng(seed)
    dirs = equirect_texel_dirs(h, w)
    sun_dir = np.array([0.5, 0.6, 0.62])
    sun_dir /= np.linalg.norm(sun_dir)
    cos = np.clip(dirs @ sun_dir, -1, 1)
    sky = 0.25 + 0.2 * dirs[..., 2]
    sun = 40.0 * np.exp((cos - 1.0) * 120.0)
    ground = 0.15 * np.maximum(-dirs[..., 2], 0.0)
    tint = np.array([1.0, 0.95, 0.85]) + 0.1 * rng.random(3)
    return np.clip((sky + sun + ground)[..., None] * tint, 0.005, None)


def dented_cube_mesh(subdiv: int = 12, half: float = 0.5,
                     dent_depth: float = 0.3,
                     dent_sigma: float = 0.22) -> TriangleMeshAsset:
    """Watertight cube with a Gaussian dent pressed into the +Z face."""
    grid = {}
    verts = []

    def vid(p):
        key = (round(p[0], 9), round(p[1], 9), round(p[2], 9))
        if key not in grid:
            grid[key] = len(verts)
            verts.append(list(key))
        return grid[key]

    faces = []
    axes = [(0, 1, 2), (0, 1, 2), (1, 2, 0), (1, 2, 0), (2, 0, 1), (2, 0, 1)]
    signs = [1, -1, 1, -1, 1, -1]
    lin = np.linspace(-half, half, subdiv + 1)
    for (i1, i2, ax), s in zip(axes, signs):
        for a in range(subdiv):
            for b in range(subdiv):
                quad = []
                for da, db in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    p = [0.0, 0.0, 0.0]
                    p[i1] = lin[a + da]
                    p[i2] = lin[b + db]
                    p[ax] = s * half
                    quad.append(vid(p))
                if s > 0:
                    faces.append([quad[0], quad[1], quad[2]])
                    faces.append([quad[0], quad[2], quad[3]])
                else:
                    faces.append([quad[0], quad[2], quad[1]])
                    faces.append([quad[0], quad[3], quad[2]])
    v = np.asarray(verts, dtype=np.float64)
    top = np.abs(v[:, 2] - half) < 1e-9
    r2 = v[:, 0] ** 2 + v[:, 1] ** 2
    v[top, 2] -= dent_depth * np.exp(-r2[top] / (2.0 * dent_sigma**2))
    # orientation note: faces wind counterclockwise seen from outside
    mesh = TriangleMeshAsset(vertices=v, faces=np.asarray(faces))
    return mesh
