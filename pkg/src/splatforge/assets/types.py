"""Domain types: splat assets, cameras, G-buffers, meshes.

All array-bearing types freeze their arrays after construction (read-only
flags), so instances are safe to share across threads. Angles are radians,
distances are world units, colors are linear RGB in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from ..errors import AssetValidationError
from . import rotation


def _freeze(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a or out.base is a:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned bounding box."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _freeze(np.asarray(self.lo).reshape(3)))
        object.__setattr__(self, "hi", _freeze(np.asarray(self.hi).reshape(3)))
        if not np.all(self.hi >= self.lo):
            raise AssetValidationError("bounds hi must be >= lo componentwise")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def radius(self) -> float:
        return float(0.5 * np.linalg.norm(self.extent))

    def contains(self, points: np.ndarray, slack: float = 1e-9) -> np.ndarray:
        p = np.asarray(points)
        return np.all((p >= self.lo - slack) & (p <= self.hi + slack), axis=-1)

    def clip(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lo, self.hi)


@dataclass(frozen=True)
class GaussianPrimitive:
    """One 2D Gaussian surfel with PBR attributes.

    The rotation matrix columns (t_u, t_v, n) give the in-plane tangent axes
    and the disk normal; scale holds the (s_u, s_v) standard deviations.
    """

    position: np.ndarray  # (3,)
    rotation: np.ndarray  # (3,) axis-angle
    scale: np.ndarray  # (2,) strictly positive
    opacity: float
    color: np.ndarray  # (3,)
    albedo: np.ndarray  # (3,)
    metallic: float
    roughness: float

    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = rotation.rotation_matrix(self.rotation)
        return m[:, 0], m[:, 1], m[:, 2]


_GRID_FIELDS = {
    "position": 3,
    "rotation": 3,
    "scale": 2,
    "opacity": 0,
    "color": 3,
    "albedo": 3,
    "metallic": 0,
    "roughness": 0,
}


@dataclass(frozen=True)
class PrimitiveGrid:
    """Pixel-aligned H x W grid of Gaussian primitives (struct of arrays)."""

    position: np.ndarray  # (H, W, 3)
    rotation: np.ndarray  # (H, W, 3)
    scale: np.ndarray  # (H, W, 2)
    opacity: np.ndarray  # (H, W)
    color: np.ndarray  # (H, W, 3)
    albedo: np.ndarray  # (H, W, 3)
    metallic: np.ndarray  # (H, W)
    roughness: np.ndarray  # (H, W)

    def __post_init__(self):
        h, w = np.asarray(self.opacity).shape
        for name, ch in _GRID_FIELDS.items():
            arr = np.asarray(getattr(self, name))
            want = (h, w) if ch == 0 else (h, w, ch)
            if arr.shape != want:
                raise AssetValidationError(
                    f"grid field {name} has shape {arr.shape}, expected {want}"
                )
            object.__setattr__(self, name, _freeze(arr))

    @property
    def shape(self) -> tuple[int, int]:
        return self.opacity.shape

    @property
    def count(self) -> int:
        return self.opacity.size

    def primitive(self, row: int, col: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            position=self.position[row, col],
            rotation=self.rotation[row, col],
            scale=self.scale[row, col],
            opacity=float(self.opacity[row, col]),
            color=self.color[row, col],
            albedo=self.albedo[row, col],
            metallic=float(self.metallic[row, col]),
            roughness=float(self.roughness[row, col]),
        )

    @staticmethod
    def from_flat(flat: dict[str, np.ndarray], shape: tuple[int, int]) -> "PrimitiveGrid":
        h, w = shape
        kw = {}
        for name, ch in _GRID_FIELDS.items():
            want = (h, w) if ch == 0 else (h, w, ch)
            kw[name] = np.asarray(flat[name]).reshape(want)
        return PrimitiveGrid(**kw)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. The camera looks down -Z of its own frame, +Y is up.

    `world_from_camera` maps camera-frame points to world. Depth maps produced
    against this camera hold ray distances from the camera origin, not z-depth.
    """

    world_from_camera: np.ndarray  # (4, 4)
    fov_y: float  # radians
    resolution: tuple[int, int]  # (width, height)
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        m = np.asarray(self.world_from_camera, dtype=np.float64)
        if m.shape != (4, 4):
            raise AssetValidationError("world_from_camera must be 4x4")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise AssetValidationError("camera rotation part is not orthonormal")
        if not (0.0 < self.near < self.far):
            raise AssetValidationError("camera requires 0 < near < far")
        if not (0.0 < self.fov_y < np.pi):
            raise AssetValidationError("fov_y must lie in (0, pi)")
        w, h = self.resolution
        if w <= 0 or h <= 0:
            raise AssetValidationError("resolution must be positive")
        object.__setattr__(self, "world_from_camera", _freeze(m))
        object.__setattr__(self, "resolution", (int(w), int(h)))
        object.__setattr__(self, "fov_y", float(self.fov_y))
        object.__setattr__(self, "near", float(self.near))
        object.__setattr__(self, "far", float(self.far))

    @property
    def origin(self) -> np.ndarray:
        return self.world_from_camera[:3, 3]

    @property
    def rotation_w_from_c(self) -> np.ndarray:
        return self.world_from_camera[:3, :3]

    def camera_from_world(self) -> np.ndarray:
        r = self.rotation_w_from_c
        t = self.origin
        out = np.eye(4)
        out[:3, :3] = r.T
        out[:3, 3] = -r.T @ t
        return out

    def pixel_rays(self) -> np.ndarray:
        """Unit world-space ray directions through pixel centers, (H, W, 3)."""
        w, h = self.resolution
        s = 2.0 * np.tan(0.5 * self.fov_y) / h
        xs = (np.arange(w) + 0.5 - 0.5 * w) * s
        ys = (0.5 * h - (np.arange(h) + 0.5)) * s
        dx, dy = np.meshgrid(xs, ys)
        d_cam = np.stack([dx, dy, -np.ones_like(dx)], axis=-1)
        d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
        return d_cam @ self.rotation_w_from_c.T

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points -> (pixel xy, camera-frame forward depth -z_cam)."""
        p = np.asarray(points, dtype=np.float64)
        r = self.rotation_w_from_c
        cam = (p - self.origin) @ r  # camera frame
        w, h = self.resolution
        s = 2.0 * np.tan(0.5 * self.fov_y) / h
        z_fwd = -cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = cam[..., 0] / (z_fwd * s) + 0.5 * w - 0.5
            py = 0.5 * h - 0.5 - cam[..., 1] / (z_fwd * s)
        return np.stack([px, py], axis=-1), z_fwd


def look_at_camera(
    eye: np.ndarray,
    target: np.ndarray,
    fov_y: float,
    resolution: tuple[int, int],
    up: np.ndarray = (0.0, 0.0, 1.0),
    near: float = 0.01,
    far: float = 100.0,
) -> Camera:
    """Camera at `eye` looking at `target`; world up defaults to +Z."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-8:  # looking straight along up, pick an arbitrary right
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        nr = np.linalg.norm(right)
        if nr < 1e-8:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
            nr = np.linalg.norm(right)
    right /= nr
    cam_up = np.cross(right, fwd)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = cam_up
    m[:3, 2] = -fwd
    m[:3, 3] = eye
    return Camera(m, fov_y=fov_y, resolution=resolution, near=near, far=far)


@dataclass(frozen=True)
class SplatterAsset:
    """Multi-view grid of pixel-aligned Gaussian primitives."""

    views: Sequence[PrimitiveGrid]
    cameras: Sequence[Camera]
    bounds: Bounds

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if len(self.views) != len(self.cameras):
            raise AssetValidationError("one camera required per view grid")
        if self.views:
            shape = self.views[0].shape
            for i, v in enumerate(self.views):
                if v.shape != shape:
                    raise AssetValidationError(
                        f"view {i} grid shape {v.shape} differs from {shape}"
                    )

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.views[0].shape if self.views else (0, 0)

    @property
    def primitive_count(self) -> int:
        return sum(v.count for v in self.views)

    def packed(self) -> dict[str, np.ndarray]:
        """Flatten all view grids into (N, ...) arrays in view order."""
        out: dict[str, np.ndarray] = {}
        for name, ch in _GRID_FIELDS.items():
            parts = [getattr(v, name).reshape(-1, ch) if ch else getattr(v, name).reshape(-1)
                     for v in self.views]
            out[name] = (
                np.concatenate(parts, axis=0)
                if parts
                else np.zeros((0, ch) if ch else (0,))
            )
        return out

    def with_views(self, views: Sequence[PrimitiveGrid]) -> "SplatterAsset":
        return SplatterAsset(views=views, cameras=self.cameras, bounds=self.bounds)


@dataclass(frozen=True)
class GBufferTarget:
    """Per-view supervision bundle.

    `rgb` and `albedo` are stored composited over black (premultiplied by
    coverage), so compositing over a background b is rgb + (1 - alpha) * b.
    `depth` is ray distance with 0 marking empty pixels. `normal_frame` flags
    whether normals live in world or camera coordinates.
    """

    rgb: np.ndarray  # (H, W, 3)
    albedo: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    normal: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    metallic: np.ndarray  # (H, W)
    roughness: np.ndarray  # (H, W)
    occlusion: Optional[np.ndarray] = None  # (H, W)
    irradiance: Optional[np.ndarray] = None  # (H, W, 3)
    normal_frame: str = "world"

    def __post_init__(self):
        h, w = np.asarray(self.alpha).shape
        shapes = {
            "rgb": (h, w, 3),
            "albedo": (h, w, 3),
            "alpha": (h, w),
            "normal": (h, w, 3),
            "depth": (h, w),
            "metallic": (h, w),
            "roughness": (h, w),
        }
        for name, want in shapes.items():
            arr = np.asarray(getattr(self, name))
            if arr.shape != want:
                raise AssetValidationError(
                    f"gbuffer channel {name} has shape {arr.shape}, expected {want}"
                )
            object.__setattr__(self, name, _freeze(arr))
        if self.occlusion is not None:
            arr = np.asarray(self.occlusion)
            if arr.shape != (h, w):
                raise AssetValidationError("occlusion map resolution mismatch")
            object.__setattr__(self, "occlusion", _freeze(arr))
        if self.irradiance is not None:
            arr = np.asarray(self.irradiance)
            if arr.shape != (h, w, 3):
                raise AssetValidationError("irradiance map resolution mismatch")
            object.__setattr__(self, "irradiance", _freeze(arr))
        if self.normal_frame not in ("world", "camera"):
            raise AssetValidationError("normal_frame must be 'world' or 'camera'")

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape

    def foreground(self) -> np.ndarray:
        return self.alpha > 0.5


@dataclass(frozen=True)
class TriangleMeshAsset:
    """Watertight triangle mesh with UV atlas and PBR textures."""

    vertices: np.ndarray  # (N, 3)
    faces: np.ndarray  # (M, 3) int
    uvs: Optional[np.ndarray] = None  # (M, 3, 2) per-corner, in [0, 1]
    albedo_texture: Optional[np.ndarray] = None  # (T, T, 3)
    metallic_texture: Optional[np.ndarray] = None  # (T, T)
    roughness_texture: Optional[np.ndarray] = None  # (T, T)
    texture_coverage: Optional[np.ndarray] = None  # (T, T) bool, observed texels

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise AssetValidationError("faces index out-of-range vertices")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.uvs is not None:
            uv = np.ascontiguousarray(self.uvs, dtype=np.float64)
            if uv.shape != (len(f), 3, 2):
                raise AssetValidationError("uvs must be per-corner (M, 3, 2)")
            uv.setflags(write=False)
            object.__setattr__(self, "uvs", uv)
        for name in ("albedo_texture", "metallic_texture", "roughness_texture",
                     "texture_coverage"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.ascontiguousarray(arr)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def face_normals(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        return n / np.maximum(norm, 1e-300)

    def replace(self, **kw) -> "TriangleMeshAsset":
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update(kw)
        return TriangleMeshAsset(**current)
