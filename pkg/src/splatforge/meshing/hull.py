"""Convex-hull hole filling: the watertight convex seed mesh for remeshing."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ..errors import MeshError
from .meshcheck import signed_volume


def hull_fill(vertices: np.ndarray):
    """3D convex hull of the input vertices, outward-oriented.

    Fills every hole of a partial surface (at the cost of concavities, which
    remeshing recovers afterwards). Raises on degenerate (coplanar) input.
    """
    pts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 4:
        raise MeshError("convex hull needs at least 4 vertices")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise MeshError(f"degenerate hull input: {exc}") from exc
    used = np.unique(hull.simplices.reshape(-1))
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = pts[used]
    faces = remap[hull.simplices]

    # orient each face outward using the hull plane equations
    normals = hull.equations[:, :3]
    v = verts[faces]
    raw = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    flip = np.einsum("fc,fc->f", raw, normals) < 0
    faces[flip] = faces[flip][:, ::-1]
    if signed_volume(verts, faces) < 0:
        faces = faces[:, ::-1]
    return verts, faces
