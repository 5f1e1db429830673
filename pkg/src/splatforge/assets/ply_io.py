"""Splat asset serialization as binary little-endian PLY.

Each primitive is one vertex with float32 properties (position, rotation,
scale, opacity, color, albedo, metallic, roughness). Header comments carry the
per-view grid shape, the asset bounds, and one camera block per view, so a
file round-trips to an identical SplatterAsset (bit-exact at 32-bit).
"""

from __future__ import annotations

import numpy as np

from ..errors import SchemaError
from .types import Bounds, Camera, PrimitiveGrid, SplatterAsset

MAGIC_COMMENT = "splatforge splat asset v1"

PROPERTIES = [
    "x", "y", "z",
    "rot_0", "rot_1", "rot_2",
    "scale_0", "scale_1",
    "opacity",
    "color_r", "color_g", "color_b",
    "albedo_r", "albedo_g", "albedo_b",
    "metallic", "roughness",
]

_FIELD_SLICES = {
    "position": slice(0, 3),
    "rotation": slice(3, 6),
    "scale": slice(6, 8),
    "opacity": slice(8, 9),
    "color": slice(9, 12),
    "albedo": slice(12, 15),
    "metallic": slice(15, 16),
    "roughness": slice(16, 17),
}


def _pack_rows(asset: SplatterAsset) -> np.ndarray:
    flat = asset.packed()
    n = asset.primitive_count
    rows = np.empty((n, len(PROPERTIES)), dtype=np.float32)
    for name, sl in _FIELD_SLICES.items():
        data = flat[name]
        rows[:, sl] = data.reshape(n, sl.stop - sl.start).astype(np.float32)
    return rows


def save_splat(asset: SplatterAsset, path) -> None:
    """Write a SplatterAsset to PLY; rejects non-finite fields."""
    rows = _pack_rows(asset)
    bad = ~np.isfinite(rows)
    if bad.any():
        idx = int(np.nonzero(bad.any(axis=1))[0][0])
        raise SchemaError(f"refusing to save: non-finite field in primitive {idx}")

    h, w = asset.grid_shape
    lines = [
        "ply",
        "format binary_little_endian 1.0",
        f"comment {MAGIC_COMMENT}",
        f"comment grid {len(asset.views)} {h} {w}",
        "comment bounds " + " ".join(repr(float(v)) for v in
                                     np.r_[asset.bounds.lo, asset.bounds.hi]),
    ]
    for i, cam in enumerate(asset.cameras):
        vals = list(cam.world_from_camera.reshape(-1)) + [
            cam.fov_y, cam.resolution[0], cam.resolution[1], cam.near, cam.far,
        ]
        lines.append(f"comment camera {i} " + " ".join(repr(float(v)) for v in vals))
    lines.append(f"element vertex {len(rows)}")
    lines += [f"property float {p}" for p in PROPERTIES]
    lines.append("end_header")

    with open(str(path), "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())


def _parse_header(f) -> tuple[list[str], dict, int]:
    first = f.readline().strip()
    if first != b"ply":
        raise SchemaError("not a PLY file")
    props: list[str] = []
    meta: dict = {"cameras": {}}
    count = None
    fmt_seen = False
    while True:
        raw = f.readline()
        if not raw:
            raise SchemaError("PLY header truncated (no end_header)")
        line = raw.decode("ascii", errors="replace").strip()
        if line == "end_header":
            break
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise SchemaError(f"unsupported PLY format {parts[1]}")
            fmt_seen = True
        elif parts[0] == "comment":
            if len(parts) >= 2 and parts[1] == "grid":
                meta["grid"] = tuple(int(v) for v in parts[2:5])
            elif len(parts) >= 2 and parts[1] == "bounds":
                meta["bounds"] = [float(v) for v in parts[2:8]]
            elif len(parts) >= 2 and parts[1] == "camera":
                meta["cameras"][int(parts[2])] = [float(v) for v in parts[3:]]
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise SchemaError(f"unexpected PLY element {parts[1]}")
            count = int(parts[2])
        elif parts[0] == "property":
            if parts[1] != "float":
                raise SchemaError(f"unsupported property type {parts[1]}")
            props.append(parts[2])
    if not fmt_seen or count is None:
        raise SchemaError("malformed PLY header")
    return props, meta, count


def load_splat(path) -> SplatterAsset:
    """Read a splat PLY written by save_splat."""
    with open(str(path), "rb") as f:
        props, meta, count = _parse_header(f)
        missing = [p for p in PROPERTIES if p not in props]
        if missing:
            raise SchemaError(f"PLY missing required property '{missing[0]}'")
        if len(props) != len(PROPERTIES):
            extra = [p for p in props if p not in PROPERTIES]
            raise SchemaError(f"PLY property-count mismatch (unexpected {extra})")
        raw = f.read(count * len(props) * 4)
    if len(raw) != count * len(props) * 4:
        raise SchemaError("PLY payload shorter than declared vertex count")
    rows = np.frombuffer(raw, dtype="<f4").reshape(count, len(props))
    # reorder columns into canonical property order
    rows = rows[:, [props.index(p) for p in PROPERTIES]]

    bad = ~np.isfinite(rows)
    if bad.any():
        idx = int(np.nonzero(bad.any(axis=1))[0][0])
        col = PROPERTIES[int(np.nonzero(bad[idx])[0][0])]
        raise SchemaError(f"NaN/inf field '{col}' in primitive {idx}")

    if "grid" not in meta or "bounds" not in meta:
        raise SchemaError("PLY header missing grid/bounds comments")
    n_views, h, w = meta["grid"]
    if count != n_views * h * w:
        raise SchemaError(
            f"vertex count {count} does not match grid {n_views}x{h}x{w}"
        )
    cameras = []
    for i in range(n_views):
        if i not in meta["cameras"]:
            raise SchemaError(f"PLY header missing camera block {i}")
        vals = meta["cameras"][i]
        if len(vals) != 21:
            raise SchemaError(f"camera block {i} has {len(vals)} values, expected 21")
        cameras.append(
            Camera(
                world_from_camera=np.array(vals[:16]).reshape(4, 4),
                fov_y=vals[16],
                resolution=(int(vals[17]), int(vals[18])),
                near=vals[19],
                far=vals[20],
            )
        )

    rows64 = rows.astype(np.float64)
    views = []
    per = h * w
    for v in range(n_views):
        chunk = rows64[v * per : (v + 1) * per]
        views.append(
            PrimitiveGrid.from_flat(
                {name: chunk[:, sl] for name, sl in _FIELD_SLICES.items()},
                (h, w),
            )
        )
    bounds = Bounds(meta["bounds"][:3], meta["bounds"][3:])
    return SplatterAsset(views=views, cameras=cameras, bounds=bounds)
