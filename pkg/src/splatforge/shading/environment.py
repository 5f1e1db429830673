"""Environment lights: equirectangular radiance, cosine-convolved irradiance,
GGX-prefiltered specular cubemap chain, and the DFG lookup table.

Every prefilter stage is a fixed linear operator on the radiance texels
(deterministic Hammersley sample sets, bilinear taps, normalized weights), so
a prefiltered light can also be expressed as explicit matrices; lighting
recovery exploits that. Equirect convention: row v in [0, 1] maps colatitude
theta = v * pi from +Z, column u maps longitude phi = 2 pi u - pi.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import SchemaError, ShadingError
from .brdf import build_dfg_lut, ggx_sample_halfvector, hammersley

_DFG_CACHE: dict = {}


# ---------------------------------------------------------------------------
# equirectangular mapping

def equirect_texel_dirs(h: int, w: int) -> np.ndarray:
    """Unit directions at texel centers, (h, w, 3)."""
    theta = (np.arange(h) + 0.5) / h * np.pi
    phi = (np.arange(w) + 0.5) / w * 2.0 * np.pi - np.pi
    st, ct = np.sin(theta), np.cos(theta)
    return np.stack(
        [
            st[:, None] * np.cos(phi)[None, :],
            st[:, None] * np.sin(phi)[None, :],
            np.broadcast_to(ct[:, None], (h, w)),
        ],
        axis=-1,
    )


def equirect_solid_angles(h: int, w: int) -> np.ndarray:
    theta = (np.arange(h) + 0.5) / h * np.pi
    return np.broadcast_to(
        (np.sin(theta) * (np.pi / h) * (2.0 * np.pi / w))[:, None], (h, w)
    ).copy()


def dir_to_equirect_uv(dirs: np.ndarray) -> np.ndarray:
    d = np.asarray(dirs, dtype=np.float64)
    u = (np.arctan2(d[..., 1], d[..., 0]) + np.pi) / (2.0 * np.pi)
    v = np.arccos(np.clip(d[..., 2], -1.0, 1.0)) / np.pi
    return np.stack([u, v], axis=-1)


def equirect_taps(h: int, w: int, dirs: np.ndarray):
    """Bilinear taps (flat indices (N, 4), weights (N, 4)): wrap-u, clamp-v."""
    uv = dir_to_equirect_uv(np.asarray(dirs).reshape(-1, 3))
    x = uv[:, 0] * w - 0.5
    y = np.clip(uv[:, 1] * h - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2) if h > 1 else np.zeros(
        len(x), np.int64)
    fx = x - x0
    fy = np.clip(y - y0, 0.0, 1.0)
    x0m = np.mod(x0, w)
    x1m = np.mod(x0 + 1, w)
    y1 = np.minimum(y0 + 1, h - 1)
    idx = np.stack([y0 * w + x0m, y0 * w + x1m, y1 * w + x0m, y1 * w + x1m],
                   axis=-1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy],
                   axis=-1)
    return idx, wts


def equirect_sample(env: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    h, w = env.shape[:2]
    idx, wts = equirect_taps(h, w, dirs)
    flat = env.reshape(h * w, -1)
    out = np.einsum("nt,ntc->nc", wts, flat[idx])
    return out.reshape(np.asarray(dirs).shape[:-1] + (flat.shape[1],))


def equirect_sample_grad(env: np.ndarray, dirs: np.ndarray):
    """Sample plus d(value)/d(dir), shapes (N, C) and (N, C, 3).

    The gradient treats the bilinear cell as fixed (piecewise-smooth model);
    pole pixels get zero direction gradients.
    """
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    h, w = env.shape[:2]
    flat = env.reshape(h * w, -1)
    idx, wts = equirect_taps(h, w, d)
    tap_vals = flat[idx]  # (N, 4, C)
    val = np.einsum("nt,ntc->nc", wts, tap_vals)

    uv = dir_to_equirect_uv(d)
    x = uv[:, 0] * w - 0.5
    y = np.clip(uv[:, 1] * h - 0.5, 0.0, h - 1.0)
    fx = x - np.floor(x)
    fy = y - np.floor(y) if h > 1 else np.zeros_like(y)

    d_dfx = ((tap_vals[:, 1] - tap_vals[:, 0]) * (1 - fy)[:, None]
             + (tap_vals[:, 3] - tap_vals[:, 2]) * fy[:, None])
    d_dfy = ((tap_vals[:, 2] - tap_vals[:, 0]) * (1 - fx)[:, None]
             + (tap_vals[:, 3] - tap_vals[:, 1]) * fx[:, None])

    xy2 = d[:, 0] ** 2 + d[:, 1] ** 2
    safe = xy2 > 1e-12
    inv = np.where(safe, 1.0 / np.maximum(xy2, 1e-300), 0.0)
    du_ddir = np.stack([-d[:, 1] * inv, d[:, 0] * inv, np.zeros_like(inv)],
                       axis=-1) / (2.0 * np.pi)
    sin_t = np.sqrt(np.clip(1.0 - d[:, 2] ** 2, 1e-12, None))
    dv_ddir = np.zeros_like(d)
    dv_ddir[:, 2] = np.where(safe, -1.0 / (np.pi * sin_t), 0.0)

    # v-clamp at the poles kills the fy derivative
    interior_v = ((y > 0) & (y < h - 1))[:, None, None]
    grad = d_dfx[..., None] * (w * du_ddir)[:, None, :] + np.where(
        interior_v, d_dfy[..., None] * (h * dv_ddir)[:, None, :], 0.0)
    return val, grad


def downsample_equirect(env: np.ndarray, rows: int) -> np.ndarray:
    """Solid-angle-weighted block average down to `rows` x `2 rows` texels."""
    h, w = env.shape[:2]
    cols = rows * 2
    if h <= rows:
        return np.asarray(env, dtype=np.float64)
    if h % rows or w % cols:
        raise ShadingError(
            f"environment {h}x{w} is not an integer multiple of {rows}x{cols}"
        )
    fy, fx = h // rows, w // cols
    omega = equirect_solid_angles(h, w)[..., None]
    num = (env * omega).reshape(rows, fy, cols, fx, -1).sum(axis=(1, 3))
    den = omega.reshape(rows, fy, cols, fx, 1).sum(axis=(1, 3))
    return num / den


def rotate_environment(env: np.ndarray, azimuth_texels: int) -> np.ndarray:
    """Exact rotation about +Z by whole texels (positive = +phi)."""
    return np.roll(env, azimuth_texels, axis=1)


# ---------------------------------------------------------------------------
# cubemap

_FACE_AXES = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)]
_FACE_OTHER = [(1, 2), (1, 2), (0, 2), (0, 2), (0, 1), (0, 1)]


def cube_texel_dirs(res: int) -> np.ndarray:
    """Unit directions of all cubemap texels, (6, res, res, 3)."""
    g = (np.arange(res) + 0.5) / res * 2.0 - 1.0
    a, b = np.meshgrid(g, g, indexing="ij")
    out = np.zeros((6, res, res, 3))
    for f, (ax, s) in enumerate(_FACE_AXES):
        i1, i2 = _FACE_OTHER[f]
        vec = np.zeros((res, res, 3))
        vec[..., ax] = s
        vec[..., i1] = a
        vec[..., i2] = b
        out[f] = vec / np.linalg.norm(vec, axis=-1, keepdims=True)
    return out


def cube_assign(dirs: np.ndarray):
    """Face index plus in-face coordinates (a, b) in [-1, 1] per direction."""
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    ax = np.argmax(np.abs(d), axis=-1)
    sign = np.sign(np.take_along_axis(d, ax[:, None], axis=-1)[:, 0])
    sign = np.where(sign == 0, 1.0, sign)
    face = ax * 2 + (sign < 0)
    major = np.take_along_axis(d, ax[:, None], axis=-1)[:, 0] * sign
    i1 = np.array([_FACE_OTHER[f][0] for f in face])
    i2 = np.array([_FACE_OTHER[f][1] for f in face])
    rows = np.arange(len(d))
    a = d[rows, i1] / np.maximum(major, 1e-300)
    b = d[rows, i2] / np.maximum(major, 1e-300)
    return face, a, b


def cube_taps(res: int, dirs: np.ndarray):
    """Edge-clamped bilinear taps into a (6, res, res) cubemap.

    Returns flat indices into the (6 * res * res) texel array and weights.
    """
    face, a, b = cube_assign(dirs)
    x = np.clip((a + 1.0) * 0.5 * res - 0.5, 0.0, res - 1.0)
    y = np.clip((b + 1.0) * 0.5 * res - 0.5, 0.0, res - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(res - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(res - 2, 0))
    fx = np.clip(x - x0, 0.0, 1.0)
    fy = np.clip(y - y0, 0.0, 1.0)
    x1 = np.minimum(x0 + 1, res - 1)
    y1 = np.minimum(y0 + 1, res - 1)
    base = face * res * res
    idx = np.stack([base + x0 * res + y0, base + x1 * res + y0,
                    base + x0 * res + y1, base + x1 * res + y1], axis=-1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy],
                   axis=-1)
    return idx, wts


def cube_sample(faces: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Bilinear sample of a (6, res, res, C) cubemap."""
    res = faces.shape[1]
    idx, wts = cube_taps(res, dirs)
    flat = faces.reshape(6 * res * res, -1)
    out = np.einsum("nt,ntc->nc", wts, flat[idx])
    return out.reshape(np.asarray(dirs).shape[:-1] + (flat.shape[1],))


def cube_sample_grad(faces: np.ndarray, dirs: np.ndarray):
    """Sample plus d(value)/d(dir) for unit query directions."""
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    res = faces.shape[1]
    flat = faces.reshape(6 * res * res, -1)
    idx, wts = cube_taps(res, d)
    tap_vals = flat[idx]
    val = np.einsum("nt,ntc->nc", wts, tap_vals)

    face, a, b = cube_assign(d)
    x = (a + 1.0) * 0.5 * res - 0.5
    y = (b + 1.0) * 0.5 * res - 0.5
    in_x = (x > 0) & (x < res - 1)
    in_y = (y > 0) & (y < res - 1)
    fx = np.clip(x - np.floor(np.clip(x, 0, res - 1)), 0, 1)
    fy = np.clip(y - np.floor(np.clip(y, 0, res - 1)), 0, 1)
    d_dfx = ((tap_vals[:, 1] - tap_vals[:, 0]) * (1 - fy)[:, None]
             + (tap_vals[:, 3] - tap_vals[:, 2]) * fy[:, None])
    d_dfy = ((tap_vals[:, 2] - tap_vals[:, 0]) * (1 - fx)[:, None]
             + (tap_vals[:, 3] - tap_vals[:, 1]) * fx[:, None])
    d_dfx = np.where(in_x[:, None], d_dfx, 0.0)
    d_dfy = np.where(in_y[:, None], d_dfy, 0.0)

    ax = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    i1 = np.array([_FACE_OTHER[f][0] for f in face])
    i2 = np.array([_FACE_OTHER[f][1] for f in face])
    rows = np.arange(len(d))
    major = np.take_along_axis(d, ax[:, None], axis=-1)[:, 0] * sign
    inv_m = 1.0 / np.maximum(major, 1e-300)
    # a = d[i1] / major: da/dd[i1] = 1/major, da/dd[axis] = -a * sign / major
    da = np.zeros_like(d)
    db = np.zeros_like(d)
    da[rows, i1] = inv_m
    da[rows, ax] = -d[rows, i1] * inv_m * inv_m * sign
    db[rows, i2] = inv_m
    db[rows, ax] = -d[rows, i2] * inv_m * inv_m * sign
    scale = 0.5 * res
    grad = (d_dfx[..., None] * (scale * da)[:, None, :]
            + d_dfy[..., None] * (scale * db)[:, None, :])
    return val, grad


# ---------------------------------------------------------------------------
# prefiltering

@dataclass(frozen=True)
class PrefilterParams:
    cube_res: int = 64
    mip_count: int = 5
    lut_res: int = 64
    spec_samples: int = 1024
    lut_samples: int = 1024
    irr_res: tuple[int, int] = (16, 32)
    irr_source_rows: int = 32

    def as_dict(self) -> dict:
        return {
            "cube_res": self.cube_res,
            "mip_count": self.mip_count,
            "lut_res": self.lut_res,
            "spec_samples": self.spec_samples,
            "lut_samples": self.lut_samples,
            "irr_res": list(self.irr_res),
            "irr_source_rows": self.irr_source_rows,
        }


@dataclass
class PrefilterOperator:
    """Dense linear maps from flattened env texels to prefiltered texels."""

    irradiance: np.ndarray  # (irr_texels, env_texels)
    mips: list  # per mip: (6 * S_k^2, env_texels)


@dataclass
class EnvironmentLight:
    """Prefiltered image-based light (immutable after construction)."""

    radiance: np.ndarray  # (H, W, 3) equirect
    irradiance_map: np.ndarray  # (h, w, 3) equirect, cosine-convolved
    specular_mips: list  # mip k: (6, S_k, S_k, 3), roughness k / (K - 1)
    dfg_lut: np.ndarray  # (R, R, 2) over (n.v, roughness)
    params: PrefilterParams
    content_hash: str
    operator: Optional[PrefilterOperator] = None

    @property
    def mip_roughness(self) -> np.ndarray:
        k = len(self.specular_mips)
        return np.arange(k) / max(k - 1, 1)


def _content_hash(env: np.ndarray, params: PrefilterParams) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(env, dtype=np.float64).tobytes())
    digest.update(json.dumps(params.as_dict(), sort_keys=True).encode())
    return digest.hexdigest()


def mip_face_sizes(params: PrefilterParams) -> list[int]:
    # floor of 8: tiny faces with clamped bilinear cannot track smooth
    # gradients across face seams even for very rough lobes
    return [min(max(params.cube_res >> k, 8), params.cube_res)
            for k in range(params.mip_count)]


def prefilter(env: np.ndarray, params: PrefilterParams = PrefilterParams(),
              record_operator: bool = False) -> EnvironmentLight:
    """Build an EnvironmentLight from raw equirectangular radiance.

    Rejects NaN or negative texels with their coordinates. With
    record_operator=True the (memory-heavy) linear maps from radiance texels
    to every prefiltered texel are kept alongside the maps.
    """
    env = np.asarray(env, dtype=np.float64)
    if env.ndim != 3 or env.shape[2] != 3:
        raise ShadingError(f"environment must be (H, W, 3), got {env.shape}")
    bad = ~np.isfinite(env) | (env < 0)
    if bad.any():
        i, j, _ = np.unravel_index(int(np.argmax(bad)), env.shape)
        raise ShadingError(f"invalid radiance texel at row {i}, col {j}")

    h, w = env.shape[:2]
    n_env = h * w
    env_flat = env.reshape(n_env, 3)

    # --- irradiance: normalized cosine convolution of a (possibly reduced) env
    src = downsample_equirect(env, params.irr_source_rows)
    sh, sw = src.shape[:2]
    src_dirs = equirect_texel_dirs(sh, sw).reshape(-1, 3)
    src_omega = equirect_solid_angles(sh, sw).reshape(-1)
    ih, iw = params.irr_res
    out_dirs = equirect_texel_dirs(ih, iw).reshape(-1, 3)
    cosw = np.maximum(out_dirs @ src_dirs.T, 0.0) * src_omega[None, :]
    cosw /= cosw.sum(axis=1, keepdims=True)
    irradiance = (cosw @ src.reshape(-1, 3)).reshape(ih, iw, 3)

    irr_op = None
    if record_operator:
        if (sh, sw) == (h, w):
            irr_op = cosw
        else:
            # compose with the block-average downsampling operator
            fy, fx = h // sh, w // sw
            omega = equirect_solid_angles(h, w).reshape(sh, fy, sw, fx)
            down = np.zeros((sh * sw, n_env))
            for r in range(sh):
                for c in range(sw):
                    block = np.zeros((h, w))
                    block[r * fy:(r + 1) * fy, c * fx:(c + 1) * fx] = (
                        omega[r, :, c, :] / omega[r, :, c, :].sum()
                    )
                    down[r * sw + c] = block.reshape(-1)
            irr_op = cosw @ down

    # --- specular mip chain
    sizes = mip_face_sizes(params)
    rough = np.arange(params.mip_count) / max(params.mip_count - 1, 1)
    mips = []
    mip_ops = [] if record_operator else None
    for k, (size, r) in enumerate(zip(sizes, rough)):
        dirs = cube_texel_dirs(size).reshape(-1, 3)
        if k == 0:
            idx, wts = equirect_taps(h, w, dirs)
            vals = np.einsum("nt,ntc->nc", wts, env_flat[idx])
            if record_operator:
                op = np.zeros((len(dirs), n_env))
                np.add.at(op, (np.repeat(np.arange(len(dirs)), 4), idx.reshape(-1)),
                          wts.reshape(-1))
                mip_ops.append(op)
        else:
            vals, op = _prefilter_level(env_flat, (h, w), dirs, float(r),
                                        params.spec_samples, record_operator)
            if record_operator:
                mip_ops.append(op)
        mips.append(vals.reshape(6, size, size, 3))

    key = (params.lut_res, params.lut_samples)
    if key not in _DFG_CACHE:
        _DFG_CACHE[key] = build_dfg_lut(params.lut_res, params.lut_samples)
    lut = _DFG_CACHE[key]

    operator = PrefilterOperator(irradiance=irr_op, mips=mip_ops) if record_operator else None
    return EnvironmentLight(
        radiance=env,
        irradiance_map=irradiance,
        specular_mips=mips,
        dfg_lut=lut,
        params=params,
        content_hash=_content_hash(env, params),
        operator=operator,
    )


def _prefilter_level(env_flat, env_shape, dirs, roughness, samples,
                     record_operator):
    """GGX-filtered radiance for each texel direction (N = V = R convention)."""
    h, w = env_shape
    alpha = max(roughness * roughness, 1e-4)
    hvec_local = ggx_sample_halfvector(hammersley(samples), alpha)  # (S, 3)
    n = len(dirs)
    vals = np.zeros((n, 3))
    op = np.zeros((n, h * w)) if record_operator else None

    # tangent frames per texel
    up = np.where(np.abs(dirs[:, 2:3]) < 0.999,
                  np.tile([0.0, 0.0, 1.0], (n, 1)),
                  np.tile([1.0, 0.0, 0.0], (n, 1)))
    t1 = np.cross(up, dirs)
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(dirs, t1)

    chunk = max(1, (1 << 22) // samples)
    for beg in range(0, n, chunk):
        sl = slice(beg, min(beg + chunk, n))
        nn = dirs[sl]  # (C, 3)
        hw = (hvec_local[None, :, 0, None] * t1[sl][:, None, :]
              + hvec_local[None, :, 1, None] * t2[sl][:, None, :]
              + hvec_local[None, :, 2, None] * nn[:, None, :])  # (C, S, 3)
        vh = np.einsum("cse,ce->cs", hw, nn)
        l = 2.0 * vh[..., None] * hw - nn[:, None, :]
        nl = np.einsum("cse,ce->cs", l, nn)
        keep = nl > 0
        wgt = np.where(keep, nl, 0.0)
        wsum = wgt.sum(axis=1)
        idx, wts = equirect_taps(h, w, l.reshape(-1, 3))
        tapw = (wts * wgt.reshape(-1)[:, None])  # (C*S, 4)
        li = env_flat[idx]  # (C*S, 4, 3)
        contrib = np.einsum("nt,ntc->nc", tapw, li).reshape(-1, samples, 3).sum(axis=1)
        vals[sl] = contrib / np.maximum(wsum, 1e-300)[:, None]
        if record_operator:
            rows = np.repeat(np.arange(sl.start, sl.stop), samples * 4)
            np.add.at(op, (rows, idx.reshape(-1)),
                      (tapw / np.maximum(
                          np.repeat(wsum, samples)[:, None], 1e-300)).reshape(-1))
    return vals, op


# ---------------------------------------------------------------------------
# cache container

_CACHE_MAGIC = b"SFIBL1\n"


def save_light_cache(path, light: EnvironmentLight) -> None:
    """Write a prefiltered light to the binary cache container."""
    arrays = {
        "radiance": light.radiance,
        "irradiance": light.irradiance_map,
        "dfg_lut": light.dfg_lut,
    }
    for k, mip in enumerate(light.specular_mips):
        arrays[f"mip{k}"] = mip
    header = {
        "content_hash": light.content_hash,
        "params": light.params.as_dict(),
        "arrays": {k: list(v.shape) for k, v in arrays.items()},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(str(path), "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<q", len(blob)))
        f.write(blob)
        for k in sorted(arrays):
            f.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())


def load_light_cache(path) -> EnvironmentLight:
    with open(str(path), "rb") as f:
        if f.read(len(_CACHE_MAGIC)) != _CACHE_MAGIC:
            raise SchemaError("not a splatforge IBL cache file")
        (n,) = struct.unpack("<q", f.read(8))
        header = json.loads(f.read(n).decode())
        arrays = {}
        for k in sorted(header["arrays"]):
            shape = tuple(header["arrays"][k])
            count = int(np.prod(shape))
            arrays[k] = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape)
    p = header["params"]
    params = PrefilterParams(
        cube_res=p["cube_res"], mip_count=p["mip_count"], lut_res=p["lut_res"],
        spec_samples=p["spec_samples"], lut_samples=p["lut_samples"],
        irr_res=tuple(p["irr_res"]), irr_source_rows=p["irr_source_rows"],
    )
    mips = [arrays[f"mip{k}"] for k in range(params.mip_count)]
    light = EnvironmentLight(
        radiance=arrays["radiance"], irradiance_map=arrays["irradiance"],
        specular_mips=mips, dfg_lut=arrays["dfg_lut"], params=params,
        content_hash=header["content_hash"],
    )
    expect = _content_hash(light.radiance, params)
    if expect != light.content_hash:
        raise SchemaError("IBL cache content hash mismatch")
    return light
