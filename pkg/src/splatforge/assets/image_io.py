"""Image IO: minimal OpenEXR scanline files, Radiance HDR, and LDR PNG.

EXR support covers the subset this package writes: single-part scanline files,
compression NONE, HALF or FLOAT channels. HDR files are equirectangular RGBE
(both flat and run-length encoded scanlines are read; flat is written). PNG
round-trips apply the sRGB transfer, EXR/HDR stay linear.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import SchemaError

# ---------------------------------------------------------------------------
# sRGB transfer

def linear_to_srgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    out = np.where(
        img > 0.0031308,
        1.055 * np.power(np.maximum(img, 0.0031308), 1.0 / 2.4) - 0.055,
        12.92 * img,
    )
    return np.clip(out, 0.0, 1.0)


def srgb_to_linear(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.where(
        img <= 0.04045,
        img / 12.92,
        np.power((np.maximum(img, 0.04045) + 0.055) / 1.055, 2.4),
    )


# ---------------------------------------------------------------------------
# PNG (LDR previews and texture maps)

def write_png(path, img: np.ndarray, srgb: bool = True) -> None:
    """Write an LDR PNG; linear input is sRGB-encoded unless srgb=False."""
    img = np.asarray(img, dtype=np.float64)
    if srgb:
        img = linear_to_srgb(img)
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    if data.ndim == 2:
        Image.fromarray(data, mode="L").save(str(path))
    else:
        Image.fromarray(data, mode="RGB").save(str(path))


def read_png(path, srgb: bool = True) -> np.ndarray:
    """Read a PNG to linear float64 (sRGB decoded unless srgb=False)."""
    img = np.asarray(Image.open(str(path)), dtype=np.float64)
    if img.dtype == np.float64 and img.max() > 1.0:
        img = img / 255.0
    if img.ndim == 3 and img.shape[2] == 4:
        img = img[..., :3]
    return srgb_to_linear(img) if srgb else img


# ---------------------------------------------------------------------------
# OpenEXR (uncompressed scanline, HALF/FLOAT)

_EXR_MAGIC = 0x01312F76
_PT_HALF = 1
_PT_FLOAT = 2


def _attr(name: bytes, typ: bytes, payload: bytes) -> bytes:
    return name + b"\0" + typ + b"\0" + struct.pack("<i", len(payload)) + payload


def write_exr(path, img: np.ndarray, half: bool = False) -> None:
    """Write (H, W) or (H, W, C<=4) float data as an uncompressed EXR."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    names = {1: ["Y"], 2: ["X", "Y"], 3: ["R", "G", "B"], 4: ["R", "G", "B", "A"]}.get(c)
    if names is None:
        raise SchemaError(f"unsupported channel count {c} for EXR write")
    order = sorted(range(c), key=lambda i: names[i])  # file stores channels alphabetically

    ptype = _PT_HALF if half else _PT_FLOAT
    chlist = b""
    for i in order:
        chlist += names[i].encode() + b"\0"
        chlist += struct.pack("<i", ptype) + b"\0\0\0\0" + struct.pack("<ii", 1, 1)
    chlist += b"\0"

    box = struct.pack("<iiii", 0, 0, w - 1, h - 1)
    header = b"".join(
        [
            _attr(b"channels", b"chlist", chlist),
            _attr(b"compression", b"compression", b"\0"),
            _attr(b"dataWindow", b"box2i", box),
            _attr(b"displayWindow", b"box2i", box),
            _attr(b"lineOrder", b"lineOrder", b"\0"),
            _attr(b"pixelAspectRatio", b"float", struct.pack("<f", 1.0)),
            _attr(b"screenWindowCenter", b"v2f", struct.pack("<ff", 0.0, 0.0)),
            _attr(b"screenWindowWidth", b"float", struct.pack("<f", 1.0)),
        ]
    ) + b"\0"

    pix = img.astype(np.float16) if half else img
    bpp = 2 if half else 4
    line_bytes = w * c * bpp
    start = 8 + len(header) + 8 * h
    with open(str(path), "wb") as f:
        f.write(struct.pack("<ii", _EXR_MAGIC, 2))
        f.write(header)
        for y in range(h):
            f.write(struct.pack("<q", start + y * (8 + line_bytes)))
        for y in range(h):
            f.write(struct.pack("<ii", y, line_bytes))
            for i in order:
                f.write(pix[y, :, i].tobytes())


def _read_exr_header(f):
    magic, version = struct.unpack("<ii", f.read(8))
    if magic != _EXR_MAGIC:
        raise SchemaError("not an EXR file (bad magic)")
    if version & 0xFF != 2 or version & 0x200:  # no deep/multipart support
        raise SchemaError("unsupported EXR version flags")
    attrs = {}
    while True:
        name = b""
        ch = f.read(1)
        if ch == b"\0":
            break
        while ch != b"\0":
            name += ch
            ch = f.read(1)
        typ = b""
        ch = f.read(1)
        while ch != b"\0":
            typ += ch
            ch = f.read(1)
        size = struct.unpack("<i", f.read(4))[0]
        attrs[name.decode()] = (typ.decode(), f.read(size))
    return attrs


def read_exr(path) -> np.ndarray:
    """Read an uncompressed scanline EXR to (H, W) or (H, W, C) float32."""
    with open(str(path), "rb") as f:
        attrs = _read_exr_header(f)
        if "channels" not in attrs or "dataWindow" not in attrs:
            raise SchemaError("EXR header missing required attributes")
        comp = attrs.get("compression", ("", b"\0"))[1][0]
        if comp != 0:
            raise SchemaError(f"unsupported EXR compression {comp} (only NONE)")
        xmin, ymin, xmax, ymax = struct.unpack("<iiii", attrs["dataWindow"][1])
        w, h = xmax - xmin + 1, ymax - ymin + 1

        chan_data = attrs["channels"][1]
        channels = []  # (name, ptype) in file order
        pos = 0
        while chan_data[pos] != 0:
            end = chan_data.index(b"\0", pos)
            cname = chan_data[pos:end].decode()
            ptype = struct.unpack("<i", chan_data[end + 1 : end + 5])[0]
            if ptype not in (_PT_HALF, _PT_FLOAT):
                raise SchemaError(f"unsupported EXR pixel type {ptype} in channel {cname}")
            channels.append((cname, ptype))
            pos = end + 5 + 4 + 8
        f.read(8 * h)  # offset table, blocks follow contiguously

        out = np.zeros((h, w, len(channels)), dtype=np.float32)
        for _ in range(h):
            y, nbytes = struct.unpack("<ii", f.read(8))
            row = f.read(nbytes)
            if len(row) != nbytes:
                raise SchemaError(f"EXR truncated at scanline {y}")
            off = 0
            for ci, (cname, ptype) in enumerate(channels):
                n = w * (2 if ptype == _PT_HALF else 4)
                buf = row[off : off + n]
                off += n
                dt = np.float16 if ptype == _PT_HALF else np.float32
                out[y - ymin, :, ci] = np.frombuffer(buf, dtype=dt).astype(np.float32)

    names = [c[0] for c in channels]
    if names == ["Y"]:
        return out[..., 0]
    want = [n for n in ("R", "G", "B", "A") if n in names]
    if len(want) == len(names) and len(names) >= 3:
        idx = [names.index(n) for n in want]
        return out[..., idx]
    if names == ["X", "Y"]:
        return out[..., [0, 1]]
    return out


# ---------------------------------------------------------------------------
# Radiance HDR (RGBE)

def _rgbe_encode(rgb: np.ndarray) -> np.ndarray:
    rgb = np.maximum(np.asarray(rgb, dtype=np.float64), 0.0)
    v = rgb.max(axis=-1)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    ok = v >= 1e-32
    if np.any(ok):
        m, e = np.frexp(v[ok])
        scale = m * 256.0 / v[ok]
        enc = np.clip(rgb[ok] * scale[..., None] + 0.5, 0, 255).astype(np.uint8)
        out[ok, :3] = enc
        out[ok, 3] = (e + 128).astype(np.uint8)
    return out


def _rgbe_decode(rgbe: np.ndarray) -> np.ndarray:
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    e = rgbe[..., 3].astype(np.int32)
    scale = np.where(e == 0, 0.0, np.ldexp(1.0, e - 136))
    return rgbe[..., :3].astype(np.float64) * scale[..., None]


def write_hdr(path, img: np.ndarray) -> None:
    """Write equirectangular linear RGB as a flat (non-RLE) Radiance HDR."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise SchemaError("HDR write expects (H, W, 3)")
    h, w = img.shape[:2]
    with open(str(path), "wb") as f:
        f.write(b"#?RADIANCE\n")
        f.write(b"FORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {h} +X {w}\n".encode())
        f.write(_rgbe_encode(img).tobytes())


def read_hdr(path) -> np.ndarray:
    """Read a Radiance HDR file (flat or new-style RLE) to linear float64."""
    with open(str(path), "rb") as f:
        if f.readline().rstrip() not in (b"#?RADIANCE", b"#?RGBE"):
            raise SchemaError("not a Radiance HDR file")
        while True:
            line = f.readline()
            if not line:
                raise SchemaError("HDR header truncated")
            if line.strip() == b"":
                break
        dims = f.readline().split()
        if len(dims) != 4 or dims[0] != b"-Y" or dims[2] != b"+X":
            raise SchemaError(f"unsupported HDR orientation {dims!r}")
        h, w = int(dims[1]), int(dims[3])
        data = f.read()

    rgbe = np.zeros((h, w, 4), dtype=np.uint8)
    pos = 0
    for y in range(h):
        if pos + 4 > len(data):
            raise SchemaError(f"HDR truncated at scanline {y}")
        head = data[pos : pos + 4]
        if head[0] == 2 and head[1] == 2 and (head[2] << 8 | head[3]) == w and w >= 8:
            pos += 4
            for c in range(4):  # per-component RLE
                x = 0
                while x < w:
                    count = data[pos]
                    pos += 1
                    if count > 128:  # run
                        rgbe[y, x : x + count - 128, c] = data[pos]
                        pos += 1
                        x += count - 128
                    else:  # literal
                        rgbe[y, x : x + count, c] = np.frombuffer(
                            data[pos : pos + count], dtype=np.uint8
                        )
                        pos += count
                        x += count
        else:
            row = np.frombuffer(data[pos : pos + 4 * w], dtype=np.uint8).reshape(w, 4)
            rgbe[y] = row
            pos += 4 * w
    return _rgbe_decode(rgbe)


def read_environment(path) -> np.ndarray:
    """Read an equirectangular radiance map from .hdr or .exr."""
    p = Path(str(path))
    if p.suffix.lower() == ".hdr":
        return read_hdr(p)
    if p.suffix.lower() == ".exr":
        img = read_exr(p)
        if img.ndim != 3 or img.shape[2] < 3:
            raise SchemaError("environment EXR must have RGB channels")
        return np.asarray(img[..., :3], dtype=np.float64)
    raise SchemaError(f"unsupported environment format: {p.suffix}")
