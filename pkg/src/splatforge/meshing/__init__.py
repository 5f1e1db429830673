from .hull import hull_fill
from .mesh_raster import MeshRender, mesh_backward, render_mesh
from .meshcheck import (
    hausdorff_distance,
    has_self_intersections,
    is_watertight_manifold,
    signed_volume,
)
from .refine import RefineConfig, refine_textures
from .remesh import RemeshConfig, RemeshResult, continuous_remesh
from .tsdf import TsdfVolume, extract_surface, integrate_views
from .unproject import pull_push, unproject_textures
from .uv_atlas import atlas_metrics, rasterize_atlas, unwrap
from .views import fusion_cameras, render_fusion_views, render_mesh_targets
from .gltf_io import load_gltf, save_gltf, save_obj

__all__ = [
    "hull_fill",
    "MeshRender",
    "mesh_backward",
    "render_mesh",
    "hausdorff_distance",
    "has_self_intersections",
    "is_watertight_manifold",
    "signed_volume",
    "RefineConfig",
    "refine_textures",
    "RemeshConfig",
    "RemeshResult",
    "continuous_remesh",
    "TsdfVolume",
    "extract_surface",
    "integrate_views",
    "pull_push",
    "unproject_textures",
    "atlas_metrics",
    "rasterize_atlas",
    "unwrap",
    "fusion_cameras",
    "render_fusion_views",
    "render_mesh_targets",
    "load_gltf",
    "save_gltf",
    "save_obj",
]
