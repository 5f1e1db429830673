"""glTF 2.0 export (plus an OBJ+MTL fallback) for textured mesh assets.

Writes `<stem>.gltf` with an external `<stem>.bin` buffer and PNG textures:
base color (sRGB) and a metallic-roughness map packed glTF-style (roughness
in G, metallic in B, the occlusion slot in R left at zero). Per-corner UVs
are converted to an indexed vertex stream split on UV seams. A minimal
reader for files produced here supports round-trip tests.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..assets.image_io import read_png, write_png
from ..assets.types import TriangleMeshAsset
from ..errors import SchemaError


def _index_with_uvs(mesh: TriangleMeshAsset):
    """Split vertices on UV seams: unique (vertex, quantized uv) pairs."""
    f = mesh.faces
    uv = mesh.uvs if mesh.uvs is not None else np.zeros((len(f), 3, 2))
    corner_v = f.reshape(-1)
    corner_uv = uv.reshape(-1, 2)
    quant = np.round(corner_uv * 1e7).astype(np.int64)
    key = np.stack([corner_v, quant[:, 0], quant[:, 1]], axis=-1)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    positions = mesh.vertices[uniq[:, 0]]
    uvs_out = uniq[:, 1:].astype(np.float64) / 1e7
    indices = inverse.reshape(-1, 3)

    # smooth vertex normals accumulated from face normals
    fn = np.cross(mesh.vertices[f[:, 1]] - mesh.vertices[f[:, 0]],
                  mesh.vertices[f[:, 2]] - mesh.vertices[f[:, 0]])
    vn = np.zeros_like(mesh.vertices)
    for k in range(3):
        for c in range(3):
            vn[:, c] += np.bincount(f[:, k], weights=fn[:, c],
                                    minlength=len(mesh.vertices))
    vn /= np.maximum(np.linalg.norm(vn, axis=-1, keepdims=True), 1e-300)
    normals = vn[uniq[:, 0]]
    return positions, normals, uvs_out, indices


def save_gltf(mesh: TriangleMeshAsset, path) -> dict:
    """Write mesh + PBR textures; returns the written file map."""
    path = Path(str(path))
    stem = path.stem
    out_dir = path.parent
    out_dir.mkdir(parents=True, exist_ok=True)

    positions, normals, uvs, indices = _index_with_uvs(mesh)
    pos32 = positions.astype("<f4")
    nrm32 = normals.astype("<f4")
    uv32 = np.stack([uvs[:, 0], 1.0 - uvs[:, 1]], axis=-1).astype("<f4")
    idx32 = indices.reshape(-1).astype("<u4")

    blobs = [pos32.tobytes(), nrm32.tobytes(), uv32.tobytes(), idx32.tobytes()]
    offsets = []
    total = 0
    for b in blobs:
        offsets.append(total)
        total += len(b)
    bin_name = f"{stem}.bin"
    (out_dir / bin_name).write_bytes(b"".join(blobs))

    files = {"gltf": str(path), "bin": str(out_dir / bin_name)}
    textures = []
    images = []
    samplers = [{"magFilter": 9729, "minFilter": 9729,
                 "wrapS": 33071, "wrapT": 33071}]
    material: dict = {
        "name": "pbr",
        "pbrMetallicRoughness": {},
        "doubleSided": False,
    }
    if mesh.albedo_texture is not None:
        base_name = f"{stem}_basecolor.png"
        write_png(out_dir / base_name, mesh.albedo_texture, srgb=True)
        images.append({"uri": base_name})
        textures.append({"sampler": 0, "source": len(images) - 1})
        material["pbrMetallicRoughness"]["baseColorTexture"] = {
            "index": len(textures) - 1}
        files["basecolor"] = str(out_dir / base_name)
    if mesh.metallic_texture is not None and mesh.roughness_texture is not None:
        mr_name = f"{stem}_metallicroughness.png"
        mr = np.stack([
            np.zeros_like(mesh.roughness_texture),
            mesh.roughness_texture,
            mesh.metallic_texture,
        ], axis=-1)
        write_png(out_dir / mr_name, mr, srgb=False)
        images.append({"uri": mr_name})
        textures.append({"sampler": 0, "source": len(images) - 1})
        material["pbrMetallicRoughness"]["metallicRoughnessTexture"] = {
            "index": len(textures) - 1}
        files["metallicroughness"] = str(out_dir / mr_name)

    doc = {
        "asset": {"version": "2.0", "generator": "splatforge"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0}],
        "meshes": [{
            "primitives": [{
                "attributes": {"POSITION": 0, "NORMAL": 1, "TEXCOORD_0": 2},
                "indices": 3,
                "material": 0,
            }]
        }],
        "materials": [material],
        "buffers": [{"uri": bin_name, "byteLength": total}],
        "bufferViews": [
            {"buffer": 0, "byteOffset": offsets[0], "byteLength": len(blobs[0]),
             "target": 34962},
            {"buffer": 0, "byteOffset": offsets[1], "byteLength": len(blobs[1]),
             "target": 34962},
            {"buffer": 0, "byteOffset": offsets[2], "byteLength": len(blobs[2]),
             "target": 34962},
            {"buffer": 0, "byteOffset": offsets[3], "byteLength": len(blobs[3]),
             "target": 34963},
        ],
        "accessors": [
            {"bufferView": 0, "componentType": 5126, "count": len(pos32),
             "type": "VEC3",
             "min": [float(x) for x in pos32.min(axis=0)],
             "max": [float(x) for x in pos32.max(axis=0)]},
            {"bufferView": 1, "componentType": 5126, "count": len(nrm32),
             "type": "VEC3"},
            {"bufferView": 2, "componentType": 5126, "count": len(uv32),
             "type": "VEC2"},
            {"bufferView": 3, "componentType": 5125, "count": len(idx32),
             "type": "SCALAR"},
        ],
        "samplers": samplers,
        "textures": textures,
        "images": images,
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return files


def load_gltf(path) -> TriangleMeshAsset:
    """Read a glTF file written by save_gltf (subset reader for round trips)."""
    path = Path(str(path))
    doc = json.loads(path.read_text())
    if doc.get("asset", {}).get("version") != "2.0":
        raise SchemaError("unsupported glTF version")
    buf = (path.parent / doc["buffers"][0]["uri"]).read_bytes()

    def accessor(idx):
        acc = doc["accessors"][idx]
        view = doc["bufferViews"][acc["bufferView"]]
        start = view.get("byteOffset", 0)
        data = buf[start : start + view["byteLength"]]
        dt = {5126: "<f4", 5125: "<u4"}[acc["componentType"]]
        arr = np.frombuffer(data, dtype=dt)
        width = {"VEC3": 3, "VEC2": 2, "SCALAR": 1}[acc["type"]]
        return arr.reshape(acc["count"], width) if width > 1 else arr

    prim = doc["meshes"][0]["primitives"][0]
    positions = accessor(prim["attributes"]["POSITION"]).astype(np.float64)
    uv = accessor(prim["attributes"]["TEXCOORD_0"]).astype(np.float64)
    uv = np.stack([uv[:, 0], 1.0 - uv[:, 1]], axis=-1)
    indices = accessor(prim["indices"]).astype(np.int64).reshape(-1, 3)

    albedo = metallic = roughness = None
    mat = doc.get("materials", [{}])[0].get("pbrMetallicRoughness", {})
    if "baseColorTexture" in mat:
        tex = doc["textures"][mat["baseColorTexture"]["index"]]
        uri = doc["images"][tex["source"]]["uri"]
        albedo = read_png(path.parent / uri, srgb=True)
    if "metallicRoughnessTexture" in mat:
        tex = doc["textures"][mat["metallicRoughnessTexture"]["index"]]
        uri = doc["images"][tex["source"]]["uri"]
        mr = read_png(path.parent / uri, srgb=False)
        roughness = mr[..., 1]
        metallic = mr[..., 2]

    return TriangleMeshAsset(
        vertices=positions, faces=indices, uvs=uv[indices],
        albedo_texture=albedo, metallic_texture=metallic,
        roughness_texture=roughness,
    )


def save_obj(mesh: TriangleMeshAsset, path) -> dict:
    """OBJ + MTL + PNG fallback export."""
    path = Path(str(path))
    stem = path.stem
    out_dir = path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    positions, normals, uvs, indices = _index_with_uvs(mesh)

    lines = [f"mtllib {stem}.mtl", "o splatforge_mesh"]
    for p in positions:
        lines.append(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
    for t in uvs:
        lines.append(f"vt {t[0]:.9g} {1.0 - t[1]:.9g}")
    for n in normals:
        lines.append(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
    lines.append("usemtl pbr")
    for tri in indices:
        a, b, c = tri + 1
        lines.append(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")
    path.write_text("\n".join(lines) + "\n")

    mtl = ["newmtl pbr", "Ka 1 1 1", "Kd 1 1 1", "Ks 0 0 0"]
    files = {"obj": str(path)}
    if mesh.albedo_texture is not None:
        write_png(out_dir / f"{stem}_basecolor.png", mesh.albedo_texture)
        mtl.append(f"map_Kd {stem}_basecolor.png")
        files["basecolor"] = str(out_dir / f"{stem}_basecolor.png")
    (out_dir / f"{stem}.mtl").write_text("\n".join(mtl) + "\n")
    files["mtl"] = str(out_dir / f"{stem}.mtl")
    return files
