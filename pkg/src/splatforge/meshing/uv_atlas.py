"""UV unwrapping: angle-threshold chart segmentation, planar projection, and
shelf packing with texel gutters.

Charts grow by face adjacency while the face normal stays within an angle
limit (default 66 degrees) of the chart seed normal; each chart is projected
onto its seed plane, so developable surfaces (boxes) unwrap without
distortion. Charts pack into the unit square with a fixed gutter at the
target texture resolution; a global scale search maximizes occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import MeshError
from .meshcheck import undirected_edges

DEFAULT_ANGLE_LIMIT_DEG = 66.0


@dataclass
class UvChart:
    faces: np.ndarray  # face indices
    uv: np.ndarray  # (n_faces, 3, 2) chart-local coordinates


def _face_adjacency(faces: np.ndarray):
    edge_to_faces: dict = {}
    for fi, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            edge_to_faces.setdefault(key, []).append(fi)
    adj = [[] for _ in range(len(faces))]
    for flist in edge_to_faces.values():
        for i in range(len(flist)):
            for j in range(i + 1, len(flist)):
                adj[flist[i]].append(flist[j])
                adj[flist[j]].append(flist[i])
    return adj


def segment_charts(vertices: np.ndarray, faces: np.ndarray,
                   angle_limit_deg: float = DEFAULT_ANGLE_LIMIT_DEG) -> list:
    """Greedy chart growth under the seed-normal angle limit.

    Faces join the chart in order of increasing deviation from the seed
    normal (priority growth), so charts stay compact and round instead of
    tracing breadth-first blobs; compact charts pack far better.
    """
    import heapq

    n = np.cross(vertices[faces[:, 1]] - vertices[faces[:, 0]],
                 vertices[faces[:, 2]] - vertices[faces[:, 0]])
    norms = np.linalg.norm(n, axis=-1)
    n = n / np.maximum(norms[:, None], 1e-300)
    cos_limit = np.cos(np.deg2rad(angle_limit_deg))
    adj = _face_adjacency(faces)

    assigned = np.full(len(faces), -1, dtype=np.int64)
    charts = []
    for seed in range(len(faces)):
        if assigned[seed] >= 0:
            continue
        cid = len(charts)
        seed_n = n[seed]
        heap = [(0.0, seed)]
        members = []
        while heap:
            dev, cur = heapq.heappop(heap)
            if assigned[cur] >= 0:
                continue
            assigned[cur] = cid
            members.append(cur)
            for nb in adj[cur]:
                if assigned[nb] < 0:
                    cosd = float(n[nb] @ seed_n)
                    if cosd >= cos_limit:
                        heapq.heappush(heap, (1.0 - cosd, nb))
        charts.append((np.asarray(sorted(members), dtype=np.int64), seed_n))
    return charts


def _project_chart(vertices, faces, members, seed_normal):
    up = np.array([0.0, 0.0, 1.0]) if abs(seed_normal[2]) < 0.99 else np.array(
        [1.0, 0.0, 0.0])
    t1 = np.cross(up, seed_normal)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(seed_normal, t1)
    tri = vertices[faces[members]]  # (m, 3, 3)
    uv = np.stack([tri @ t1, tri @ t2], axis=-1)
    # rotate to principal axes when that tightens the bounding box
    # (crescents and slivers benefit; symmetric charts keep their frame)
    flat = uv.reshape(-1, 2)
    centered = flat - flat.mean(axis=0)
    cov = centered.T @ centered
    vals, vecs = np.linalg.eigh(cov)
    axis = vecs[:, np.argmax(vals)]
    if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):  # deterministic sign
        axis = -axis
    rot = np.array([[axis[0], axis[1]], [-axis[1], axis[0]]])
    uv_rot = uv @ rot.T
    area_old = np.prod(np.ptp(flat, axis=0) + 1e-12)
    area_new = np.prod(np.ptp(uv_rot.reshape(-1, 2), axis=0) + 1e-12)
    if area_new < area_old:
        uv = uv_rot
    uv -= uv.reshape(-1, 2).min(axis=0)
    return uv


def unwrap(vertices: np.ndarray, faces: np.ndarray,
           texture_res: int = 512,
           angle_limit_deg: float = DEFAULT_ANGLE_LIMIT_DEG,
           gutter_texels: float = 2.0,
           existing_uvs: np.ndarray | None = None,
           keep_uv: bool = False):
    """Per-corner UVs in [0, 1], non-overlapping charts, packed with gutters.

    With keep_uv=True and existing UVs supplied, returns them unchanged.
    Returns (uvs (M, 3, 2), chart_id (M,)).
    """
    if keep_uv and existing_uvs is not None:
        return np.asarray(existing_uvs, dtype=np.float64), None
    charts = segment_charts(vertices, faces, angle_limit_deg)
    pieces = []
    for members, seed_n in charts:
        uv = _project_chart(vertices, faces, members, seed_n)
        pieces.append((members, uv))

    gutter = gutter_texels / texture_res
    uvs, chart_id, scale = _pack(pieces, len(faces), gutter)
    if scale <= 0:
        raise MeshError("UV packing failed: no feasible chart scale")
    return uvs, chart_id


_PACK_GRID = 256


def _chart_mask(uv: np.ndarray, scale: float, grid: int,
                margin: float = 0.75):
    """Conservative occupancy bitmap of a chart at the given scale.

    Cells whose centers lie within `margin` cells of the chart interior are
    marked (per-edge margins scale with the edge length, so the bound is in
    cells regardless of triangle size). Content is rasterized at a +1 cell
    offset; placement maps mask cell (1, 1) to the chart's UV origin.
    """
    pix = uv * scale * grid + 1.0
    w = int(np.ceil(pix[..., 0].max())) + 2
    h = int(np.ceil(pix[..., 1].max())) + 2
    if w > grid or h > grid:
        return None
    mask = np.zeros((h, w), dtype=bool)
    for tri in pix:
        lo = np.clip(np.floor(tri.min(axis=0)) - 1, 0, None).astype(np.int64)
        hi = np.clip(np.ceil(tri.max(axis=0)) + 1, 0,
                     [w - 1, h - 1]).astype(np.int64)
        if np.any(hi < lo):
            continue
        xs = np.arange(lo[0], hi[0] + 1)
        ys = np.arange(lo[1], hi[1] + 1)
        gx, gy = np.meshgrid(xs, ys)
        pc = np.stack([gx.reshape(-1) + 0.5, gy.reshape(-1) + 0.5], axis=-1)
        p0, p1, p2 = tri
        area = ((p1 - p0)[0] * (p2 - p0)[1] - (p1 - p0)[1] * (p2 - p0)[0])
        if abs(area) < 1e-12:
            mask[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1] = True
            continue
        sgn = np.sign(area)
        inside = np.ones(len(pc), dtype=bool)
        for pa, pb in ((p1, p2), (p2, p0), (p0, p1)):
            wv = ((pa - pc)[:, 0] * (pb - pc)[:, 1]
                  - (pa - pc)[:, 1] * (pb - pc)[:, 0])
            inside &= wv * sgn >= -margin * np.linalg.norm(pb - pa)
        mask[gy.reshape(-1)[inside], gx.reshape(-1)[inside]] = True
    return mask


def _pack(pieces, n_faces, gutter):
    """Bitmap bottom-left packing with a binary search on the chart scale.

    Charts are rasterized exactly onto an occupancy grid; placement tests use
    the raw chart mask against a gutter-dilated occupancy map, so round
    charts can nest instead of reserving their bounding boxes while keeping
    at least one gutter of spacing between charts.
    """
    from scipy.signal import fftconvolve

    grid = _PACK_GRID
    pad = max(int(np.ceil(gutter * grid)), 1)
    areas = []
    for _, uv in pieces:
        tri = uv
        a = 0.5 * np.abs(
            (tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1])
            - (tri[:, 1, 1] - tri[:, 0, 1]) * (tri[:, 2, 0] - tri[:, 0, 0]))
        areas.append(float(a.sum()))
    order = np.argsort(-np.asarray(areas), kind="stable")

    # rotation variants share one mask builder, so placement and final UVs
    # can never disagree about where the content sits
    variants = []
    for members, uv in pieces:
        vs = []
        cur = uv
        for rot in range(2):  # 0 and 90 degrees; charts are PCA-aligned
            anchored = cur - cur.reshape(-1, 2).min(axis=0)
            vs.append(anchored)
            cur = np.stack([cur[..., 1], -cur[..., 0]], axis=-1)
        variants.append(vs)

    def try_scale(s):
        # dilated occupancy: border plus gutter halo around placed charts
        occupied = np.zeros((grid, grid), dtype=bool)
        occupied[:1, :] = occupied[-1:, :] = True
        occupied[:, :1] = occupied[:, -1:] = True
        places = {}
        for idx in order:
            best_pos = None
            for rot in range(4):
                mask = _chart_mask(variants[idx][rot], s, grid)
                if mask is None:
                    continue
                score = fftconvolve(occupied.astype(np.float64),
                                    mask[::-1, ::-1].astype(np.float64),
                                    mode="valid")
                free = np.argwhere(score < 0.5)
                if len(free) == 0:
                    continue
                oy, ox = free[0]
                if best_pos is None or (oy, ox) < best_pos[:2]:
                    best_pos = (int(oy), int(ox), rot, mask)
            if best_pos is None:
                return None
            oy, ox, rot, mask = best_pos
            halo = _dilate(mask, pad)
            hh, hw = halo.shape
            y0 = max(oy - pad, 0)
            x0 = max(ox - pad, 0)
            ys = slice(y0, min(oy - pad + hh, grid))
            xs = slice(x0, min(ox - pad + hw, grid))
            occupied[ys, xs] |= halo[y0 - (oy - pad):y0 - (oy - pad) + (ys.stop - ys.start),
                                     x0 - (ox - pad):x0 - (ox - pad) + (xs.stop - xs.start)]
            places[int(idx)] = ((ox + 1) / grid, (oy + 1) / grid, rot)
        return places

    max_dim = max(max(uv[..., 0].max(), uv[..., 1].max())
                  for _, uv in pieces if uv.size)
    lo, hi = 0.0, 1.0 / max(float(max_dim), 1e-9)
    best = None
    best_scale = 0.0
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        places = try_scale(mid)
        if places is not None:
            best, best_scale = places, mid
            lo = mid
        else:
            hi = mid
    if best is None:
        return None, None, 0.0

    uvs = np.zeros((n_faces, 3, 2))
    chart_id = np.zeros(n_faces, dtype=np.int64)
    for k, (members, uv) in enumerate(pieces):
        ox, oy, rot = best[k]
        uvs[members] = variants[k][rot] * best_scale + np.array([ox, oy])
        chart_id[members] = k
    return uvs, chart_id, best_scale


def _dilate(mask: np.ndarray, r: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(r):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


# ---------------------------------------------------------------------------
# atlas rasterization: texel -> face map, coverage, overlap accounting

def rasterize_atlas(uvs: np.ndarray, res: int, chart_id: np.ndarray | None = None):
    """Map each texel center to its covering face.

    Returns (face_map (res, res) int64 with -1 empty, bary (res, res, 3),
    overlap_count). Overlap counts texels claimed by more than one chart;
    texels shared along edges of faces within one chart are legitimate.
    """
    face_map = np.full(res * res, -1, dtype=np.int64)
    bary_map = np.zeros((res * res, 3))
    owner_chart = np.full(res * res, -1, dtype=np.int64)
    overlap_mask = np.zeros(res * res, dtype=bool)
    if chart_id is None:
        chart_id = np.arange(len(uvs), dtype=np.int64)

    pix = uvs * res - 0.5
    lo = np.clip(np.floor(pix.min(axis=1)), 0, res - 1).astype(np.int64)
    hi = np.clip(np.ceil(pix.max(axis=1)), 0, res - 1).astype(np.int64)
    for fi in range(len(uvs)):
        xs = np.arange(lo[fi, 0], hi[fi, 0] + 1)
        ys = np.arange(lo[fi, 1], hi[fi, 1] + 1)
        if len(xs) == 0 or len(ys) == 0:
            continue
        gx, gy = np.meshgrid(xs, ys)
        pc = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=-1).astype(np.float64)
        p0, p1, p2 = pix[fi]
        area = ((p1 - p0)[0] * (p2 - p0)[1] - (p1 - p0)[1] * (p2 - p0)[0])
        if abs(area) < 1e-12:
            continue
        w0 = ((p1 - pc)[:, 0] * (p2 - pc)[:, 1] - (p1 - pc)[:, 1] * (p2 - pc)[:, 0])
        w1 = ((p2 - pc)[:, 0] * (p0 - pc)[:, 1] - (p2 - pc)[:, 1] * (p0 - pc)[:, 0])
        w2 = ((p0 - pc)[:, 0] * (p1 - pc)[:, 1] - (p0 - pc)[:, 1] * (p1 - pc)[:, 0])
        s = np.sign(area)
        inside = (w0 * s >= 0) & (w1 * s >= 0) & (w2 * s >= 0)
        if not inside.any():
            continue
        lin = (pc[inside, 1].astype(np.int64) * res
               + pc[inside, 0].astype(np.int64))
        lam = np.stack([w0[inside], w1[inside], w2[inside]], axis=-1) / area
        fresh = face_map[lin] < 0
        face_map[lin[fresh]] = fi
        bary_map[lin[fresh]] = lam[fresh]
        owner_chart[lin[fresh]] = chart_id[fi]
        foreign = ~fresh & (owner_chart[lin] != chart_id[fi])
        overlap_mask[lin[foreign]] = True

    overlap = int(overlap_mask.sum())
    return (face_map.reshape(res, res), bary_map.reshape(res, res, 3), overlap)


def atlas_metrics(uvs: np.ndarray, res: int,
                  chart_id: np.ndarray | None = None) -> dict:
    face_map, _, overlap = rasterize_atlas(uvs, res, chart_id)
    covered = int(np.sum(face_map >= 0))
    return {
        "coverage": covered / (res * res),
        "overlap_texels": overlap,
        "overlap_fraction": overlap / (res * res),
    }
