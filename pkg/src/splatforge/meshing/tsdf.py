"""Block-sparse TSDF fusion of ray-distance depth maps, plus iso-surface
extraction (marching cubes) with per-vertex albedo interpolation.

Depth maps hold ray distances (not z-depth), so the signed distance along a
ray is simply sampled_distance - voxel_distance, clamped at the truncation
band and normalized to [-1, 1]. Blocks of 8^3 voxels are allocated only when
a view observes something inside them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.measure import marching_cubes

from ..assets.types import Bounds, Camera
from ..errors import MeshError

BLOCK = 8


@dataclass
class TsdfVolume:
    origin: np.ndarray  # (3,) world position of voxel (0, 0, 0)
    dims: tuple[int, int, int]  # voxel counts, multiples of BLOCK
    voxel_size: float = 0.008
    truncation: float = 0.02
    blocks: dict = field(default_factory=dict)  # (bi,bj,bk) -> slot
    tsdf: np.ndarray | None = None  # (S, BLOCK^3)
    weight: np.ndarray | None = None
    albedo: np.ndarray | None = None  # (S, BLOCK^3, 3)
    albedo_weight: np.ndarray | None = None

    @staticmethod
    def from_bounds(bounds: Bounds, voxel_size: float = 0.008,
                    truncation: float = 0.02) -> "TsdfVolume":
        if truncation < voxel_size:
            import warnings

            warnings.warn(
                "truncation below voxel size undersamples the TSDF band",
                stacklevel=2)
        extent = bounds.extent
        dims = tuple(
            int(np.ceil(e / (voxel_size * BLOCK))) * BLOCK
            for e in extent
        )
        return TsdfVolume(origin=np.asarray(bounds.lo, dtype=np.float64),
                          dims=dims, voxel_size=voxel_size,
                          truncation=truncation)

    @property
    def allocated_blocks(self) -> int:
        return len(self.blocks)

    def _ensure_slots(self, keys: np.ndarray) -> np.ndarray:
        """Map (K, 3) block coordinates to slots, allocating as needed."""
        slots = np.empty(len(keys), dtype=np.int64)
        new = []
        for i, key in enumerate(map(tuple, keys)):
            slot = self.blocks.get(key)
            if slot is None:
                slot = len(self.blocks)
                self.blocks[key] = slot
                new.append(slot)
            slots[i] = slot
        if new:
            grow = len(self.blocks)
            vol = BLOCK**3
            def _grown(arr, shape):
                out = np.zeros(shape)
                if arr is not None:
                    out[: len(arr)] = arr
                return out
            self.tsdf = _grown(self.tsdf, (grow, vol))
            self.weight = _grown(self.weight, (grow, vol))
            self.albedo = _grown(self.albedo, (grow, vol, 3))
            self.albedo_weight = _grown(self.albedo_weight, (grow, vol))
        return slots

    def integrate(self, depth: np.ndarray, alpha: np.ndarray,
                  albedo: np.ndarray, camera: Camera) -> None:
        """Weighted TSDF update from one ray-distance depth view."""
        nx, ny, nz = self.dims
        w, h = camera.resolution
        # candidate voxels: the full grid, chunked along x-slabs
        for x0 in range(0, nx, BLOCK):
            xs = np.arange(x0, min(x0 + BLOCK, nx))
            gy, gx, gz = np.meshgrid(np.arange(ny), xs, np.arange(nz))
            centers = (np.stack([gx, gy, gz], axis=-1).reshape(-1, 3) + 0.5)
            world = self.origin + centers * self.voxel_size
            pix, z_fwd = camera.project(world)
            px = np.round(pix[:, 0]).astype(np.int64)
            py = np.round(pix[:, 1]).astype(np.int64)
            ok = (z_fwd > 0) & (px >= 0) & (px < w) & (py >= 0) & (py < h)
            if not ok.any():
                continue
            lin = py[ok] * w + px[ok]
            d_samp = depth.reshape(-1)[lin]
            a_samp = alpha.reshape(-1)[lin]
            observed = (a_samp > 0.5) & (d_samp > 0)
            if not observed.any():
                continue
            sel = np.flatnonzero(ok)[observed]
            r_vox = np.linalg.norm(world[sel] - camera.origin, axis=-1)
            sdf = d_samp[observed] - r_vox
            band = sdf > -self.truncation
            if not band.any():
                continue
            sel = sel[band]
            tsdf_new = np.clip(sdf[band] / self.truncation, -1.0, 1.0)
            alb_new = albedo.reshape(-1, 3)[lin[observed][band]]
            near_band = np.abs(sdf[band]) <= self.truncation

            vox = np.stack([gx.reshape(-1)[sel], gy.reshape(-1)[sel],
                            gz.reshape(-1)[sel]], axis=-1)
            bkey = vox // BLOCK
            local = vox - bkey * BLOCK
            lidx = (local[:, 0] * BLOCK + local[:, 1]) * BLOCK + local[:, 2]
            ukeys, inv = np.unique(bkey, axis=0, return_inverse=True)
            slots = self._ensure_slots(ukeys)[inv]

            w_old = self.weight[slots, lidx]
            self.tsdf[slots, lidx] = (
                self.tsdf[slots, lidx] * w_old + tsdf_new) / (w_old + 1.0)
            self.weight[slots, lidx] = w_old + 1.0
            aw = near_band.astype(np.float64)
            self.albedo[slots, lidx] += alb_new * aw[:, None]
            self.albedo_weight[slots, lidx] += aw

    def dense(self):
        """Materialize (tsdf, weight, albedo) dense grids for extraction."""
        nx, ny, nz = self.dims
        tsdf = np.ones((nx, ny, nz))
        weight = np.zeros((nx, ny, nz))
        albedo = np.zeros((nx, ny, nz, 3))
        for (bi, bj, bk), slot in self.blocks.items():
            sl = (slice(bi * BLOCK, (bi + 1) * BLOCK),
                  slice(bj * BLOCK, (bj + 1) * BLOCK),
                  slice(bk * BLOCK, (bk + 1) * BLOCK))
            shape = (BLOCK, BLOCK, BLOCK)
            tsdf[sl] = self.tsdf[slot].reshape(shape)
            weight[sl] = self.weight[slot].reshape(shape)
            aw = np.maximum(self.albedo_weight[slot], 1e-12)
            albedo[sl] = (self.albedo[slot] / aw[:, None]).reshape(shape + (3,))
        return tsdf, weight, albedo


def integrate_views(views, cameras, volume: TsdfVolume) -> TsdfVolume:
    """Fuse (albedo, depth, alpha) view tuples sequentially (deterministic)."""
    for (albedo, depth, alpha), cam in zip(views, cameras):
        volume.integrate(depth, alpha, albedo, cam)
    return volume


def extract_surface(volume: TsdfVolume):
    """Marching cubes at iso 0 restricted to observed voxels.

    Returns (vertices, faces, vertex_albedo); raises MeshError when nothing
    was observed or no zero crossing exists.
    """
    if not volume.blocks:
        raise MeshError("no surface observed: empty TSDF volume")
    tsdf, weight, albedo = volume.dense()
    mask = weight > 0
    if not (np.any(tsdf[mask] < 0) and np.any(tsdf[mask] > 0)):
        raise MeshError("no surface observed: TSDF has no zero crossing")
    # restrict to marching cells whose 8 corners are all observed, otherwise
    # the mask boundary sheds phantom geometry at unobserved voxels
    from scipy import ndimage

    cell_mask = ndimage.binary_erosion(mask, np.ones((2, 2, 2)))
    if not cell_mask.any():
        raise MeshError("no surface observed: not enough covered cells")
    verts, faces, _, _ = marching_cubes(tsdf, level=0.0, mask=cell_mask)
    if len(faces) == 0:
        raise MeshError("no surface observed: empty extraction")

    # per-vertex albedo: trilinear interpolation of the accumulated colors
    vertex_albedo = _trilinear(albedo, verts)
    world = volume.origin + (verts + 0.5) * volume.voxel_size

    # orient faces so the surface encloses negative (interior) tsdf
    verts_idx = world
    f = faces.astype(np.int64)
    from .meshcheck import signed_volume

    if signed_volume(verts_idx, f) < 0:
        f = f[:, ::-1]
    return world, f, np.clip(vertex_albedo, 0.0, 1.0)


def _trilinear(grid: np.ndarray, coords: np.ndarray) -> np.ndarray:
    base = np.floor(coords).astype(np.int64)
    frac = coords - base
    out = np.zeros((len(coords), grid.shape[-1]))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (np.abs(1 - dx - frac[:, 0])
                     * np.abs(1 - dy - frac[:, 1])
                     * np.abs(1 - dz - frac[:, 2]))
                ix = np.clip(base[:, 0] + dx, 0, grid.shape[0] - 1)
                iy = np.clip(base[:, 1] + dy, 0, grid.shape[1] - 1)
                iz = np.clip(base[:, 2] + dz, 0, grid.shape[2] - 1)
                out += w[:, None] * grid[ix, iy, iz]
    return out
