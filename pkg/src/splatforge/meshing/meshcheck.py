"""Mesh topology and geometry checks: manifoldness, watertightness,
self-intersection, and sampled Hausdorff distance."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def undirected_edges(faces: np.ndarray):
    """(E, 2) sorted unique undirected edges plus per-edge face counts."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts


def is_watertight_manifold(vertices: np.ndarray, faces: np.ndarray) -> bool:
    """Closed edge-manifold surface with consistent orientation."""
    if len(faces) == 0:
        return False
    if len(np.unique(faces.reshape(-1))) != faces.max() + 1 and faces.min() != 0:
        pass  # isolated vertices are tolerated; edges decide
    edges, counts = undirected_edges(faces)
    if not np.all(counts == 2):
        return False
    # consistent orientation: each directed edge appears exactly once
    d = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    directed = d[:, 0] * (faces.max() + 1) + d[:, 1]
    return len(np.unique(directed)) == len(directed)


def boundary_edge_count(faces: np.ndarray) -> int:
    _, counts = undirected_edges(faces)
    return int(np.sum(counts == 1))


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v = vertices
    n = np.cross(v[faces[:, 1]] - v[faces[:, 0]], v[faces[:, 2]] - v[faces[:, 0]])
    return 0.5 * np.linalg.norm(n, axis=-1)


def signed_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    v = vertices[faces]
    return float(np.einsum("fc,fc->f", v[:, 0],
                           np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


def sample_surface(vertices: np.ndarray, faces: np.ndarray, n: int,
                   seed: int = 0) -> np.ndarray:
    """Area-weighted uniform surface samples, (n, 3)."""
    rng = np.random.default_rng(seed)
    areas = face_areas(vertices, faces)
    probs = areas / areas.sum()
    pick = rng.choice(len(faces), size=n, p=probs)
    u = rng.random((n, 1))
    v = rng.random((n, 1))
    flip = (u + v) > 1.0
    u = np.where(flip, 1.0 - u, u)
    v = np.where(flip, 1.0 - v, v)
    tri = vertices[faces[pick]]
    return tri[:, 0] + u * (tri[:, 1] - tri[:, 0]) + v * (tri[:, 2] - tri[:, 0])


def hausdorff_distance(mesh_a, mesh_b, samples: int = 20000,
                       seed: int = 0) -> float:
    """Symmetric sampled Hausdorff distance between two meshes."""
    pa = np.concatenate([sample_surface(mesh_a[0], mesh_a[1], samples, seed),
                         mesh_a[0]])
    pb = np.concatenate([sample_surface(mesh_b[0], mesh_b[1], samples, seed + 1),
                         mesh_b[0]])
    d_ab = cKDTree(pb).query(pa)[0].max()
    d_ba = cKDTree(pa).query(pb)[0].max()
    return float(max(d_ab, d_ba))


# ---------------------------------------------------------------------------
# triangle/triangle intersection (Moller's interval test)

def _line_interval(tri, dists, axis):
    """Projection interval of the triangle's plane crossing on the line axis."""
    p = tri[:, axis]
    signs = np.where(dists > 0, 1, np.where(dists < 0, -1, 0))
    # pick the vertex alone on its side (zeros join the majority side)
    alone = None
    for i in range(3):
        others = [signs[(i + 1) % 3], signs[(i + 2) % 3]]
        if signs[i] != 0 and all(o != signs[i] for o in others):
            alone = i
            break
    if alone is None:  # a vertex sits on the plane: use it as the pivot
        alone = int(np.argmin(np.abs(dists)))
    i0, i1, i2 = alone, (alone + 1) % 3, (alone + 2) % 3
    t1 = p[i1] + (p[i0] - p[i1]) * dists[i1] / (dists[i1] - dists[i0] + 1e-300)
    t2 = p[i2] + (p[i0] - p[i2]) * dists[i2] / (dists[i2] - dists[i0] + 1e-300)
    return min(t1, t2), max(t1, t2)


def triangles_intersect(t1: np.ndarray, t2: np.ndarray, eps: float = 1e-10) -> bool:
    """Interval overlap test along the plane-intersection line (Moller)."""
    n1 = np.cross(t1[1] - t1[0], t1[2] - t1[0])
    d2 = (t2 - t1[0]) @ n1
    if np.all(d2 > eps) or np.all(d2 < -eps):
        return False
    n2 = np.cross(t2[1] - t2[0], t2[2] - t2[0])
    d1 = (t1 - t2[0]) @ n2
    if np.all(d1 > eps) or np.all(d1 < -eps):
        return False
    if np.all(np.abs(d2) <= eps) and np.all(np.abs(d1) <= eps):
        return False  # coplanar: treated as non-crossing for the detector
    line = np.cross(n1, n2)
    axis = int(np.argmax(np.abs(line)))
    lo1, hi1 = _line_interval(t1, d1, axis)
    lo2, hi2 = _line_interval(t2, d2, axis)
    return max(lo1, lo2) < min(hi1, hi2) - eps


def has_self_intersections(vertices: np.ndarray, faces: np.ndarray,
                           cell_scale: float = 2.0) -> bool:
    """Grid broad phase plus exact narrow phase; adjacency is skipped."""
    if len(faces) < 2:
        return False
    tris = vertices[faces]
    lo = tris.min(axis=1)
    hi = tris.max(axis=1)
    edge = np.median(hi - lo) * cell_scale + 1e-12
    keys = np.floor(lo / edge).astype(np.int64)
    spans = np.floor(hi / edge).astype(np.int64) - keys + 1

    cells: dict = {}
    for f in range(len(faces)):
        for dx in range(spans[f, 0]):
            for dy in range(spans[f, 1]):
                for dz in range(spans[f, 2]):
                    cells.setdefault(
                        (keys[f, 0] + dx, keys[f, 1] + dy, keys[f, 2] + dz),
                        []).append(f)

    seen = set()
    for members in cells.values():
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                a, b = members[i], members[j]
                if (a, b) in seen:
                    continue
                seen.add((a, b))
                if np.any(lo[a] > hi[b]) or np.any(lo[b] > hi[a]):
                    continue
                if set(faces[a]) & set(faces[b]):
                    continue  # shared vertex/edge: not a self-intersection
                if triangles_intersect(tris[a], tris[b]):
                    return True
    return False
