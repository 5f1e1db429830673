from .core import alpha_loss, color_loss, depth_loss, material_loss, mse_loss
from .ssim import ssim
from .weights import LossBreakdown, LossWeights

__all__ = [
    "alpha_loss",
    "color_loss",
    "depth_loss",
    "material_loss",
    "mse_loss",
    "ssim",
    "LossBreakdown",
    "LossWeights",
]
