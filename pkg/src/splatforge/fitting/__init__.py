from .adam import AdamState
from .engine import FitConfig, SplatFitter, bounds_from_targets, fit_asset
from .metrics import evaluate, metric_header, metric_row, psnr

__all__ = [
    "AdamState",
    "FitConfig",
    "SplatFitter",
    "bounds_from_targets",
    "fit_asset",
    "evaluate",
    "metric_header",
    "metric_row",
    "psnr",
]
