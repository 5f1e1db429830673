"""G-buffer directory IO.

Layout: one `manifest.json` listing views in order, plus per-view EXR files
named `<view>.<channel>.exr`. Channels: rgb, albedo, alpha, normal, depth, and
orm (metallic/roughness packed as (o, r, m) with the o channel unused, the
same packing as glTF metallic-roughness textures). Optional channels:
occlusion, irradiance. rgb and albedo are stored composited over black.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import SchemaError
from .image_io import read_exr, write_exr
from .types import Camera, GBufferTarget

MANIFEST_NAME = "manifest.json"
FORMAT_TAG = "splatforge-gbuffers-v1"

_REQUIRED = ("rgb", "albedo", "alpha", "normal", "depth", "orm")
_OPTIONAL = ("occlusion", "irradiance")


def _camera_to_json(cam: Camera) -> dict:
    return {
        "world_from_camera": cam.world_from_camera.tolist(),
        "fov_y": cam.fov_y,
        "resolution": list(cam.resolution),
        "near": cam.near,
        "far": cam.far,
    }


def _camera_from_json(d: dict) -> Camera:
    return Camera(
        world_from_camera=np.array(d["world_from_camera"], dtype=np.float64),
        fov_y=float(d["fov_y"]),
        resolution=(int(d["resolution"][0]), int(d["resolution"][1])),
        near=float(d["near"]),
        far=float(d["far"]),
    )


def save_gbuffer_set(dirpath, targets, cameras, names=None) -> None:
    """Write targets + cameras as a G-buffer directory."""
    d = Path(str(dirpath))
    d.mkdir(parents=True, exist_ok=True)
    if names is None:
        names = [f"view{i:03d}" for i in range(len(targets))]
    views = []
    for name, tgt, cam in zip(names, targets, cameras):
        write_exr(d / f"{name}.rgb.exr", tgt.rgb)
        write_exr(d / f"{name}.albedo.exr", tgt.albedo)
        write_exr(d / f"{name}.alpha.exr", tgt.alpha)
        write_exr(d / f"{name}.normal.exr", tgt.normal)
        write_exr(d / f"{name}.depth.exr", tgt.depth)
        orm = np.stack([np.zeros_like(tgt.roughness), tgt.roughness, tgt.metallic], axis=-1)
        write_exr(d / f"{name}.orm.exr", orm)
        if tgt.occlusion is not None:
            write_exr(d / f"{name}.occlusion.exr", tgt.occlusion)
        if tgt.irradiance is not None:
            write_exr(d / f"{name}.irradiance.exr", tgt.irradiance)
        views.append({"name": name, "camera": _camera_to_json(cam)})
    manifest = {
        "format": FORMAT_TAG,
        "normal_frame": targets[0].normal_frame if targets else "world",
        "views": views,
    }
    (d / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))


def load_gbuffer_set(dirpath) -> tuple[list[GBufferTarget], list[Camera]]:
    """Read a G-buffer directory; views are ordered by the manifest."""
    d = Path(str(dirpath))
    mpath = d / MANIFEST_NAME
    if not mpath.exists():
        raise SchemaError(f"missing camera manifest {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != FORMAT_TAG:
        raise SchemaError(f"unknown manifest format {manifest.get('format')!r}")
    normal_frame = manifest.get("normal_frame", "world")

    targets, cameras = [], []
    for entry in manifest["views"]:
        name = entry["name"]
        chans: dict[str, np.ndarray] = {}
        for ch in _REQUIRED:
            p = d / f"{name}.{ch}.exr"
            if not p.exists():
                raise SchemaError(f"view {name}: missing channel file {p.name}")
            chans[ch] = np.asarray(read_exr(p), dtype=np.float64)
        for ch in _OPTIONAL:
            p = d / f"{name}.{ch}.exr"
            if p.exists():
                chans[ch] = np.asarray(read_exr(p), dtype=np.float64)

        shape = chans["rgb"].shape[:2]
        for ch, arr in chans.items():
            if arr.shape[:2] != shape:
                raise SchemaError(
                    f"view {name}: channel {ch} resolution {arr.shape[:2]} "
                    f"does not match {shape}"
                )
        orm = chans["orm"]
        targets.append(
            GBufferTarget(
                rgb=chans["rgb"],
                albedo=chans["albedo"],
                alpha=chans["alpha"],
                normal=chans["normal"],
                depth=chans["depth"],
                roughness=orm[..., 1],
                metallic=orm[..., 2],
                occlusion=chans.get("occlusion"),
                irradiance=chans.get("irradiance"),
                normal_frame=normal_frame,
            )
        )
        cameras.append(_camera_from_json(entry["camera"]))
    return targets, cameras
