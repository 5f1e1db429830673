"""Asset invariant checking. Validation reports, it never raises."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .types import SplatterAsset


@dataclass(frozen=True)
class Violation:
    view: int
    row: int
    col: int
    field: str
    message: str

    def __str__(self):
        return f"view {self.view} pixel ({self.row}, {self.col}): {self.field} {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __str__(self):
        if self.ok:
            return "asset valid"
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  {v}" for v in self.violations[:50]]
        if len(self.violations) > 50:
            lines.append(f"  ... and {len(self.violations) - 50} more")
        return "\n".join(lines)


def _flag(report, view, mask, name, message, limit=10000):
    rows, cols = np.nonzero(mask)
    for r, c in zip(rows[:limit], cols[:limit]):
        report.violations.append(Violation(view, int(r), int(c), name, message))


def validate(asset: SplatterAsset) -> ValidationReport:
    """Check every per-primitive invariant; empty report iff the asset is valid."""
    report = ValidationReport()
    for vi, grid in enumerate(asset.views):
        pos = grid.position
        _flag(report, vi, ~np.isfinite(pos).all(axis=-1), "position", "is not finite")
        inside = asset.bounds.contains(pos, slack=1e-6)
        _flag(report, vi, np.isfinite(pos).all(axis=-1) & ~inside, "position",
              "lies outside asset bounds")
        scale = grid.scale
        bad_scale = ~np.isfinite(scale).all(axis=-1) | (scale <= 0).any(axis=-1)
        _flag(report, vi, bad_scale, "scale", "must be strictly positive and finite")
        rot = grid.rotation
        bad_rot = ~np.isfinite(rot).all(axis=-1)
        _flag(report, vi, bad_rot, "rotation", "is not finite")
        angle = np.linalg.norm(np.where(np.isfinite(rot), rot, 0.0), axis=-1)
        _flag(report, vi, ~bad_rot & (angle > np.pi + 1e-9), "rotation",
              "angle exceeds pi (not canonicalized)")
        for name in ("opacity", "metallic", "roughness"):
            v = getattr(grid, name)
            bad = ~np.isfinite(v) | (v < 0) | (v > 1)
            _flag(report, vi, bad, name, "out of range [0, 1]")
        for name in ("color", "albedo"):
            v = getattr(grid, name)
            bad = (~np.isfinite(v) | (v < 0) | (v > 1)).any(axis=-1)
            _flag(report, vi, bad, name, "out of range [0, 1]")
    return report
