from .brdf import build_dfg_lut, sample_dfg
from .deferred import ShadeGradients, ShadeInputs, shade_deferred
from .environment import (
    EnvironmentLight,
    PrefilterParams,
    load_light_cache,
    prefilter,
    rotate_environment,
    save_light_cache,
)
from .montecarlo import mc_reference

__all__ = [
    "build_dfg_lut",
    "sample_dfg",
    "ShadeGradients",
    "ShadeInputs",
    "shade_deferred",
    "EnvironmentLight",
    "PrefilterParams",
    "load_light_cache",
    "prefilter",
    "rotate_environment",
    "save_light_cache",
    "mc_reference",
]
