"""End-to-end conversion of splat assets into relightable textured meshes:
fusion-view rendering, TSDF integration, marching cubes, convex-hull hole
filling, continuous remeshing, UV unwrapping, texture unprojection, and
differentiable texture refinement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assets.types import Camera, SplatterAsset, TriangleMeshAsset
from .errors import MeshError
from .fixtures import orbit_cameras
from .meshing.hull import hull_fill
from .meshing.mesh_raster import render_mesh
from .meshing.refine import RefineConfig, refine_textures
from .meshing.remesh import RemeshConfig, continuous_remesh
from .meshing.tsdf import TsdfVolume, extract_surface, integrate_views
from .meshing.unproject import unproject_textures
from .meshing.uv_atlas import unwrap
from .meshing.views import fusion_cameras, render_fusion_views
from .parallel import parallel_map
from .raster import rasterize
from .shading.deferred import ShadeInputs, shade_deferred
from .shading.environment import EnvironmentLight, rotate_environment


@dataclass(frozen=True)
class MeshPipelineConfig:
    voxel_size: float = 0.02  # desk-scale default; production figure is 0.008
    truncation: float = 0.04
    fusion_azimuths: int = 24
    fusion_resolution: int = 96
    remesh: RemeshConfig = field(default_factory=RemeshConfig)
    remesh_views: int = 10  # azimuths for remeshing targets (plus top/bottom)
    remesh_resolution: int = 64
    texture_resolution: int = 512
    unproject_views: int = 8  # azimuths per orbit reused for unprojection
    uv_angle_limit_deg: float = 66.0
    refine: RefineConfig = field(default_factory=RefineConfig)
    refine_resolution: int = 128
    threads: int = 1


def extract_mesh(asset: SplatterAsset,
                 config: MeshPipelineConfig = MeshPipelineConfig()
                 ) -> TriangleMeshAsset:
    """Splat asset -> watertight mesh with initialized PBR textures."""
    views, cams = render_fusion_views(
        asset, azimuths_per_orbit=config.fusion_azimuths,
        resolution=(config.fusion_resolution, config.fusion_resolution),
        threads=config.threads)
    volume = TsdfVolume.from_bounds(asset.bounds, config.voxel_size,
                                    config.truncation)
    integrate_views([(v[0], v[1], v[2]) for v in views], cams, volume)
    raw_verts, raw_faces, _ = extract_surface(volume)

    seed_verts, seed_faces = hull_fill(raw_verts)

    center = asset.bounds.center
    radius = 1.35 * asset.bounds.radius / np.tan(0.35)
    az = np.arange(config.remesh_views) / config.remesh_views * 2 * np.pi
    remesh_cams = orbit_cameras(
        az, np.full(config.remesh_views, 20.0), radius,
        resolution=(config.remesh_resolution, config.remesh_resolution),
        target=center)
    remesh_cams += orbit_cameras(
        np.array([0.0, 0.0]), np.array([88.0, -88.0]), radius,
        resolution=(config.remesh_resolution, config.remesh_resolution),
        target=center)

    def _target(cam):
        out = rasterize(asset, cam, background=(0, 0, 0),
                        record_fragments=False)
        n = np.linalg.norm(out.normal, axis=-1, keepdims=True)
        unit = np.where(n > 1e-9, out.normal / np.maximum(n, 1e-300), 0.0)
        return unit, out.alpha, out.depth

    targets = parallel_map(_target, remesh_cams, config.threads)
    result = continuous_remesh(seed_verts, seed_faces, targets, remesh_cams,
                               config.remesh)

    uvs, chart_id = unwrap(result.vertices, result.faces,
                           texture_res=config.texture_resolution,
                           angle_limit_deg=config.uv_angle_limit_deg)

    unproj_cams = fusion_cameras(asset.bounds, config.unproject_views,
                                 (config.fusion_resolution,
                                  config.fusion_resolution))

    def _unproj_view(cam):
        out = rasterize(asset, cam, background=(0, 0, 0),
                        record_fragments=False)
        material = np.stack([out.roughness, out.metallic], axis=-1)
        return out.albedo, out.depth, out.alpha, material

    unproj_views = parallel_map(_unproj_view, unproj_cams, config.threads)
    tex = unproject_textures(
        result.vertices, result.faces, uvs, unproj_views, unproj_cams,
        resolution=config.texture_resolution, chart_id=chart_id,
        threads=config.threads)

    return TriangleMeshAsset(
        vertices=result.vertices, faces=result.faces, uvs=uvs,
        albedo_texture=tex["albedo"], metallic_texture=tex["metallic"],
        roughness_texture=tex["roughness"], texture_coverage=tex["coverage"],
    )


def refine_mesh_textures(
    mesh: TriangleMeshAsset,
    asset: SplatterAsset,
    light: EnvironmentLight,
    config: MeshPipelineConfig = MeshPipelineConfig(),
) -> tuple[TriangleMeshAsset, list]:
    """Refine textures against four orthogonal shaded views of the asset.

    Targets are deferred-shaded renders of the splat asset's G-buffers under
    the same light (the generation-time appearance stand-in).
    """
    if mesh.uvs is None or mesh.albedo_texture is None:
        raise MeshError("texture refinement requires an unwrapped, textured mesh")
    center = asset.bounds.center
    radius = 1.35 * asset.bounds.radius / np.tan(0.35)
    res = config.refine_resolution
    cams = orbit_cameras(np.deg2rad([0.0, 90.0, 180.0, 270.0]),
                         np.full(4, 10.0), radius, resolution=(res, res),
                         target=center)

    def _shaded_target(cam):
        out = rasterize(asset, cam, background=(0, 0, 0),
                        record_fragments=False)
        n = np.linalg.norm(out.normal, axis=-1, keepdims=True)
        unit = np.where(n > 1e-9, out.normal / np.maximum(n, 1e-300), 0.0)
        a_safe = np.maximum(out.alpha, 1e-12)[..., None]
        inputs = ShadeInputs(
            normal=unit, view_dir=-cam.pixel_rays(),
            albedo=np.clip(out.albedo / a_safe, 0, 1),
            metallic=np.clip(out.metallic / a_safe[..., 0], 0, 1),
            roughness=np.clip(out.roughness / a_safe[..., 0], 0, 1),
            alpha=out.alpha,
        )
        shaded, _ = shade_deferred(inputs, light)
        return shaded

    targets = parallel_map(_shaded_target, cams, config.threads)
    textures = {
        "albedo": mesh.albedo_texture,
        "metallic": mesh.metallic_texture,
        "roughness": mesh.roughness_texture,
    }
    refined, history = refine_textures(
        mesh.vertices, mesh.faces, mesh.uvs, textures, targets, cams, light,
        config.refine)
    return mesh.replace(
        albedo_texture=refined["albedo"],
        metallic_texture=refined["metallic"],
        roughness_texture=refined["roughness"],
    ), history


def relight(asset_or_mesh, light: EnvironmentLight, camera: Camera,
            background=(0.0, 0.0, 0.0)):
    """Render G-buffers (splat or mesh path) and shade them under a light."""
    bg = np.asarray(background, dtype=np.float64)
    if isinstance(asset_or_mesh, SplatterAsset):
        out = rasterize(asset_or_mesh, camera, background=bg,
                        record_fragments=False)
        n = np.linalg.norm(out.normal, axis=-1, keepdims=True)
        unit = np.where(n > 1e-9, out.normal / np.maximum(n, 1e-300), 0.0)
        a_safe = np.maximum(out.alpha, 1e-12)[..., None]
        inputs = ShadeInputs(
            normal=unit, view_dir=-camera.pixel_rays(),
            albedo=np.clip((out.albedo - (1 - out.alpha[..., None]) * bg)
                           / a_safe, 0, 1),
            metallic=np.clip(out.metallic / a_safe[..., 0], 0, 1),
            roughness=np.clip(out.roughness / a_safe[..., 0], 0, 1),
            alpha=out.alpha,
        )
    elif isinstance(asset_or_mesh, TriangleMeshAsset):
        mesh = asset_or_mesh
        if mesh.uvs is None or mesh.albedo_texture is None:
            raise MeshError("relighting a mesh requires UVs and textures")
        r = render_mesh(mesh.vertices, mesh.faces, camera)
        covered = r.face_id >= 0
        res = mesh.albedo_texture.shape[0]
        h_img, w_img = r.shape
        uv = np.zeros((h_img, w_img, 2))
        fid = r.face_id[covered]
        uv[covered] = np.einsum("nk,nkc->nc", r.bary[covered],
                                mesh.uvs[fid])
        from .meshing.refine import _texture_taps

        idx, wts = _texture_taps(uv.reshape(-1, 2), res)
        alb = np.einsum("nt,ntc->nc", wts,
                        mesh.albedo_texture.reshape(-1, 3)[idx])
        met = np.einsum("nt,nt->n", wts,
                        mesh.metallic_texture.reshape(-1)[idx])
        rough = np.einsum("nt,nt->n", wts,
                          mesh.roughness_texture.reshape(-1)[idx])
        inputs = ShadeInputs(
            normal=r.normal,
            view_dir=-camera.pixel_rays(),
            albedo=np.where(covered[..., None],
                            alb.reshape(h_img, w_img, 3), 0.0),
            metallic=np.where(covered, met.reshape(h_img, w_img), 0.0),
            roughness=np.where(covered, rough.reshape(h_img, w_img), 0.0),
            alpha=r.alpha,
        )
    else:
        raise MeshError(f"cannot relight object of type {type(asset_or_mesh)}")
    image, _ = shade_deferred(inputs, light, background=bg)
    return image


def rotate_scene(asset_or_mesh, camera: Camera, env: np.ndarray,
                 azimuth_texels: int):
    """Rotate asset, camera, and environment together about +Z.

    The rotation angle equals azimuth_texels environment columns, so the
    equirect rotation is exact; a relit render of the rotated scene should
    match the unrotated one up to prefilter discretization.
    """
    from .assets.rotation import matrix_to_axis_angle, rotation_matrix

    angle = 2.0 * np.pi * azimuth_texels / env.shape[1]
    rot = rotation_matrix(np.array([0.0, 0.0, angle]))

    if isinstance(asset_or_mesh, TriangleMeshAsset):
        rotated = asset_or_mesh.replace(vertices=asset_or_mesh.vertices @ rot.T)
    else:
        from .assets.types import PrimitiveGrid, SplatterAsset as SA
        from .assets.types import Bounds

        views = []
        for grid in asset_or_mesh.views:
            mats = rotation_matrix(grid.rotation.reshape(-1, 3))
            new_rot = matrix_to_axis_angle(rot @ mats).reshape(grid.rotation.shape)
            views.append(PrimitiveGrid(
                position=grid.position @ rot.T, rotation=new_rot,
                scale=grid.scale, opacity=grid.opacity, color=grid.color,
                albedo=grid.albedo, metallic=grid.metallic,
                roughness=grid.roughness,
            ))
        b = asset_or_mesh.bounds
        corners = np.array([[x, y, z] for x in (b.lo[0], b.hi[0])
                            for y in (b.lo[1], b.hi[1])
                            for z in (b.lo[2], b.hi[2])]) @ rot.T
        rotated = SA(views=views, cameras=asset_or_mesh.cameras,
                     bounds=Bounds(corners.min(axis=0), corners.max(axis=0)))

    m = camera.world_from_camera.copy()
    m4 = np.eye(4)
    m4[:3, :3] = rot
    cam_rot = Camera(m4 @ m, fov_y=camera.fov_y, resolution=camera.resolution,
                     near=camera.near, far=camera.far)
    env_rot = rotate_environment(env, azimuth_texels)
    return rotated, cam_rot, env_rot
