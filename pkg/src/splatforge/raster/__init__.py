from .forward import (
    FragmentRecord,
    G_CUTOFF,
    PackedScene,
    Q_CLAMP,
    RenderOutput,
    RHO_MAX,
    T_EARLY_STOP,
    rasterize,
)
from .backward import RenderGradients, rasterize_backward
from .regularizers import depth_distortion, normal_consistency

__all__ = [
    "FragmentRecord",
    "G_CUTOFF",
    "PackedScene",
    "Q_CLAMP",
    "RenderOutput",
    "RHO_MAX",
    "T_EARLY_STOP",
    "rasterize",
    "RenderGradients",
    "rasterize_backward",
    "depth_distortion",
    "normal_consistency",
]
