from .types import (
    Bounds,
    Camera,
    GaussianPrimitive,
    GBufferTarget,
    PrimitiveGrid,
    SplatterAsset,
    TriangleMeshAsset,
    look_at_camera,
)
from .validate import ValidationReport, Violation, validate
from .ply_io import load_splat, save_splat
from .gbuffer_io import load_gbuffer_set, save_gbuffer_set

__all__ = [
    "Bounds",
    "Camera",
    "GaussianPrimitive",
    "GBufferTarget",
    "PrimitiveGrid",
    "SplatterAsset",
    "TriangleMeshAsset",
    "look_at_camera",
    "ValidationReport",
    "Violation",
    "validate",
    "load_splat",
    "save_splat",
    "load_gbuffer_set",
    "save_gbuffer_set",
]
