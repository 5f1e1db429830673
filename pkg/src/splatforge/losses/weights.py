"""Loss weights, the distortion weight schedule, and per-step breakdowns."""

from __future__ import annotations

from dataclasses import dataclass, field, fields


DISTORTION_WEIGHT_EARLY = 2e4  # epochs 0-2
DISTORTION_WEIGHT_LATE = 1e2  # epoch 3 onward
DISTORTION_SWITCH_EPOCH = 3


@dataclass(frozen=True)
class LossWeights:
    """Weights for the supervision losses.

    lambda_mse / lambda_ssim / lambda_perceptual are the three color-loss
    coefficients (1, 2, 5); the perceptual slot needs a pretrained network and
    stays disabled unless a hook is plugged in, so it contributes only when a
    callable is supplied to color_loss.
    """

    lambda_mse: float = 1.0
    lambda_ssim: float = 2.0
    lambda_perceptual: float = 5.0
    alpha: float = 1.0
    material: float = 1.0
    normal_consistency: float = 0.05
    deferred: float = 1.0
    depth: float = 0.0  # optional masked-L1 depth term, disabled by default

    def distortion(self, epoch: int) -> float:
        if epoch < DISTORTION_SWITCH_EPOCH:
            return DISTORTION_WEIGHT_EARLY
        return DISTORTION_WEIGHT_LATE

    def validate(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")


@dataclass
class LossBreakdown:
    """Weighted per-term values; total is their sum."""

    color_mse: float = 0.0
    color_ssim: float = 0.0
    color_perceptual: float = 0.0
    alpha_bce: float = 0.0
    material_mse: float = 0.0
    distortion: float = 0.0
    normal_consistency: float = 0.0
    deferred_shading: float = 0.0
    depth_l1: float = 0.0

    @property
    def total(self) -> float:
        return sum(getattr(self, f.name) for f in fields(self))

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["total"] = self.total
        return out

    def add_(self, other: "LossBreakdown") -> "LossBreakdown":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self
