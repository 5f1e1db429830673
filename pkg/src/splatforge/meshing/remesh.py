"""Continuous remeshing: gradient descent on vertices interleaved with edge
split / collapse / flip passes.

Per iteration the mesh is rasterized against (normal, alpha, depth) target
views; L1 image losses drive Adam steps on vertex positions, then long edges
split, short edges collapse (guarded by the link condition), and flips
regularize valences. The alpha term is tracked in the loss but carries no
gradient through the hard coverage; ray-distance depth supplies the surface
position signal instead (targets come from the same renderers, so the fixed
point is unchanged). A self-intersection detector aborts with the last valid
mesh rather than repairing silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assets.types import Camera
from ..errors import MeshError
from ..parallel import parallel_map
from .mesh_raster import mesh_backward, render_mesh
from .meshcheck import has_self_intersections, is_watertight_manifold


@dataclass(frozen=True)
class RemeshConfig:
    iterations: int = 100
    learning_rate: float = 0.004  # times the bbox extent
    edge_target_rel: float = 0.08  # target edge length, relative to extent
    l_max_factor: float = 4.0 / 3.0
    l_min_factor: float = 4.0 / 5.0
    w_normal: float = 1.0
    w_alpha: float = 1.0  # tracked in the loss; zero gradient a.e.
    w_depth: float = 6.0
    relax: float = 0.4  # tangential Laplacian relaxation per iteration
    relax_ramp: int = 6  # iterations to fade the relaxation in
    lr_warmup: int = 4  # iterations to fade the step size in
    lr_decay: float = 1.0  # final lr fraction (linear decay after warmup)
    crease_cos: float = 0.9  # collapse/flip only across near-planar edges
    check_every: int = 25
    threads: int = 1


@dataclass
class RemeshResult:
    vertices: np.ndarray
    faces: np.ndarray
    aborted: bool
    loss_history: list


def _edge_map(faces: np.ndarray) -> dict:
    """(a, b) sorted -> list of (face index, opposite vertex)."""
    edges: dict = {}
    for fi, (a, b, c) in enumerate(faces):
        for u, v, opp in ((a, b, c), (b, c, a), (c, a, b)):
            key = (min(u, v), max(u, v))
            edges.setdefault(key, []).append((fi, opp))
    return edges


def _vertex_neighbors(faces: np.ndarray, n_verts: int) -> list:
    nbrs = [set() for _ in range(n_verts)]
    for a, b, c in faces:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    return nbrs


def _split_pass(verts, faces, moments, l_max):
    lengths = np.linalg.norm(verts[faces[:, [1, 2, 0]]] - verts[faces],
                             axis=-1)
    edge_map = _edge_map(faces)
    longs = []
    for key, adj in edge_map.items():
        ln = float(np.linalg.norm(verts[key[0]] - verts[key[1]]))
        if ln > l_max:
            longs.append((ln, key))
    longs.sort(key=lambda x: (-x[0], x[1]))

    faces = faces.tolist()
    verts = verts.tolist()
    m_list = [list(m) for m in moments]
    dirty_faces = set()
    for _, (a, b) in longs:
        adj = edge_map[(a, b)]
        if len(adj) != 2 or any(fi in dirty_faces for fi, _ in adj):
            continue
        mid = [(verts[a][k] + verts[b][k]) * 0.5 for k in range(3)]
        mi = len(verts)
        verts.append(mid)
        m_list.append([
            0.5 * (m_list[a][0] + m_list[b][0]),
            0.5 * (m_list[a][1] + m_list[b][1]),
        ])
        for fi, _ in adj:
            tri = faces[fi]
            # cyclic order with a -> b or b -> a along this face
            for k in range(3):
                u, v = tri[k], tri[(k + 1) % 3]
                if {u, v} == {a, b}:
                    w = tri[(k + 2) % 3]
                    faces[fi] = [u, mi, w]
                    faces.append([mi, v, w])
                    dirty_faces.add(fi)
                    dirty_faces.add(len(faces) - 1)
                    break
    m0 = np.array([m[0] for m in m_list])
    m1 = np.array([m[1] for m in m_list])
    return (np.asarray(verts), np.asarray(faces, dtype=np.int64),
            list(zip(m0, m1)))


def _face_normals(verts, faces):
    n = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]],
                 verts[faces[:, 2]] - verts[faces[:, 0]])
    return n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-300)


def _collapse_pass(verts, faces, moments, l_min, crease_cos=0.9):
    edge_map = _edge_map(faces)
    nbrs = _vertex_neighbors(faces, len(verts))
    normals = _face_normals(verts, faces)

    # feature classification: crease edges, crease vertices, corners
    crease_edge = set()
    crease_count = np.zeros(len(verts), dtype=np.int64)
    for key, adj in edge_map.items():
        if len(adj) == 2 and float(
                normals[adj[0][0]] @ normals[adj[1][0]]) < crease_cos:
            crease_edge.add(key)
            crease_count[key[0]] += 1
            crease_count[key[1]] += 1

    shorts = []
    for key, adj in edge_map.items():
        ln = float(np.linalg.norm(verts[key[0]] - verts[key[1]]))
        if ln < l_min and len(adj) == 2:
            shorts.append((ln, key))
    shorts.sort(key=lambda x: (x[0], x[1]))

    v = verts.copy()
    face_list = faces.copy()
    alive = np.ones(len(face_list), dtype=bool)
    touched = set()
    merged = {}
    for _, (a, b) in shorts:
        if a in touched or b in touched:
            continue
        adj = edge_map[(a, b)]
        if len(adj) != 2:
            continue
        opps = {opp for _, opp in adj}
        if len(opps) != 2:
            continue
        if nbrs[a] & nbrs[b] != opps:
            continue  # link condition: collapse would pinch the surface

        # feature-preserving placement: never pull vertices off a crease
        corner_a = crease_count[a] >= 3
        corner_b = crease_count[b] >= 3
        on_crease = (a, b) in crease_edge or (b, a) in crease_edge
        feat_a = crease_count[a] > 0
        feat_b = crease_count[b] > 0
        if corner_a and corner_b:
            continue
        if corner_a:
            mid = v[a].copy()
        elif corner_b:
            mid = v[b].copy()
        elif feat_a and feat_b:
            if not on_crease:
                continue  # would weld two distinct feature lines
            mid = 0.5 * (v[a] + v[b])
        elif feat_a:
            mid = v[a].copy()
        elif feat_b:
            mid = v[b].copy()
        else:
            mid = 0.5 * (v[a] + v[b])
        # geometric guard: no face may flip or degenerate
        ok = True
        for fi in range(len(face_list)):
            if not alive[fi]:
                continue
            tri = face_list[fi]
            if a not in tri and b not in tri:
                continue
            if a in tri and b in tri:
                continue  # removed by the collapse
            old = v[tri]
            n_old = np.cross(old[1] - old[0], old[2] - old[0])
            new = old.copy()
            for k in range(3):
                if tri[k] == a or tri[k] == b:
                    new[k] = mid
            n_new = np.cross(new[1] - new[0], new[2] - new[0])
            if (np.linalg.norm(n_new) < 1e-14
                    or float(n_old @ n_new) <= 0.0):
                ok = False
                break
        if not ok:
            continue
        v[a] = mid
        moments[a] = (0.5 * (moments[a][0] + moments[b][0]),
                      0.5 * (moments[a][1] + moments[b][1]))
        merged[b] = a
        for fi, _ in adj:
            alive[fi] = False
        face_list = np.where(face_list == b, a, face_list)
        touched.update(nbrs[a] | nbrs[b] | {a, b})
        nbrs[a] = (nbrs[a] | nbrs[b]) - {a, b}
        for x in nbrs[a]:
            nbrs[x].discard(b)
            nbrs[x].add(a)

    face_list = face_list[alive]
    used = np.unique(face_list.reshape(-1))
    remap = np.full(len(v), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    new_moments = [moments[i] for i in used]
    return v[used], remap[face_list], new_moments


def _flip_pass(verts, faces, crease_cos=0.9):
    edge_map = _edge_map(faces)
    valence = np.zeros(len(verts), dtype=np.int64)
    for key in edge_map:
        valence[key[0]] += 1
        valence[key[1]] += 1
    existing = set(edge_map.keys())
    normals = _face_normals(verts, faces)
    faces = faces.copy()
    dirty = set()
    for (a, b) in sorted(edge_map.keys()):
        adj = edge_map[(a, b)]
        if len(adj) != 2:
            continue
        (f1, c), (f2, d) = adj
        if f1 in dirty or f2 in dirty or c == d:
            continue
        if float(normals[f1] @ normals[f2]) < crease_cos:
            continue  # flipping across a crease re-routes the feature line
        key_cd = (min(c, d), max(c, d))
        if key_cd in existing:
            continue
        def dev(x, delta=0):
            return (valence[x] + delta - 6) ** 2
        before = dev(a) + dev(b) + dev(c) + dev(d)
        after = dev(a, -1) + dev(b, -1) + dev(c, 1) + dev(d, 1)
        if after >= before:
            continue
        n1_old = np.cross(verts[faces[f1][1]] - verts[faces[f1][0]],
                          verts[faces[f1][2]] - verts[faces[f1][0]])
        # orientation bookkeeping: face f1 holds a->b, face f2 holds b->a
        tri1 = list(faces[f1])
        k = [i for i in range(3) if {tri1[i], tri1[(i + 1) % 3]} == {a, b}][0]
        if tri1[k] != a:
            a, b = b, a
            f1, f2 = f2, f1
            c, d = d, c
        new1 = np.array([a, d, c])
        new2 = np.array([d, b, c])
        na = np.cross(verts[new1[1]] - verts[new1[0]],
                      verts[new1[2]] - verts[new1[0]])
        nb = np.cross(verts[new2[1]] - verts[new2[0]],
                      verts[new2[2]] - verts[new2[0]])
        if (np.linalg.norm(na) < 1e-14 or np.linalg.norm(nb) < 1e-14
                or float(na @ n1_old) <= 0 or float(nb @ n1_old) <= 0):
            continue
        faces[f1] = new1
        faces[f2] = new2
        dirty.update((f1, f2))
        existing.discard((min(a, b), max(a, b)))
        existing.add(key_cd)
        valence[[a, b]] -= 1
        valence[[c, d]] += 1
    return faces


def _tangential_relax(verts, faces, amount):
    """Pull each vertex toward its one-ring centroid within the tangent plane.

    Equalizes triangle shapes without moving the surface along its normal,
    suppressing the sliver crumples that gradient steps leave near creases.
    """
    if amount <= 0:
        return verts
    n_verts = len(verts)
    centroid = np.zeros_like(verts)
    counts = np.zeros(n_verts)
    for k in range(3):
        a = faces[:, k]
        for off in (1, 2):
            b = faces[:, (k + off) % 3]
            for c in range(3):
                centroid[:, c] += np.bincount(a, weights=verts[b, c],
                                              minlength=n_verts)
            counts += np.bincount(a, minlength=n_verts)
    counts = np.maximum(counts, 1.0)
    centroid /= counts[:, None]

    fn = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]],
                  verts[faces[:, 2]] - verts[faces[:, 0]])
    vn = np.zeros_like(verts)
    for k in range(3):
        for c in range(3):
            vn[:, c] += np.bincount(faces[:, k], weights=fn[:, c],
                                    minlength=n_verts)
    vn /= np.maximum(np.linalg.norm(vn, axis=-1, keepdims=True), 1e-300)

    d = centroid - verts
    d_t = d - np.einsum("nc,nc->n", d, vn)[:, None] * vn
    return verts + amount * d_t


def _loss_and_grad(verts, faces, targets, cameras, config, threads):
    def one(args):
        (n_t, a_t, d_t), cam = args
        r = render_mesh(verts, faces, cam)
        both = (r.alpha > 0.5) & (a_t > 0.5)
        cnt = max(int(both.sum()), 1)
        dn = r.normal - n_t
        loss_n = float(np.where(both[..., None], np.abs(dn), 0).sum()) / cnt
        g_normal = np.where(both[..., None], np.sign(dn), 0) / cnt * config.w_normal
        loss_a = float(np.mean(np.abs(r.alpha - a_t)))
        loss_d = 0.0
        g_depth = None
        if d_t is not None and config.w_depth > 0:
            dd = r.depth - d_t
            loss_d = float(np.where(both, np.abs(dd), 0).sum()) / cnt
            g_depth = np.where(both, np.sign(dd), 0) / cnt * config.w_depth
        grad = mesh_backward(r, d_depth=g_depth, d_normal=g_normal)
        total = (config.w_normal * loss_n + config.w_alpha * loss_a
                 + config.w_depth * loss_d)
        return total, grad

    results = parallel_map(one, list(zip(targets, cameras)), threads)
    n = len(results)
    loss = sum(r[0] for r in results) / n
    grad = sum(r[1] for r in results) / n
    return loss, grad


def continuous_remesh(
    vertices: np.ndarray,
    faces: np.ndarray,
    targets: list,
    cameras: list[Camera],
    config: RemeshConfig = RemeshConfig(),
) -> RemeshResult:
    """Refine a watertight seed mesh toward (normal, alpha, depth) targets.

    targets holds per-view tuples (normal, alpha, depth) where depth may be
    None. The mesh stays watertight and edge-manifold through every pass; on
    a detected self-intersection the last checked-valid mesh is returned with
    aborted=True.
    """
    verts = np.asarray(vertices, dtype=np.float64).copy()
    f = np.asarray(faces, dtype=np.int64).copy()
    if not is_watertight_manifold(verts, f):
        raise MeshError("remeshing requires a watertight manifold seed")
    extent = float((verts.max(axis=0) - verts.min(axis=0)).max())
    h_target = config.edge_target_rel * extent
    l_max = config.l_max_factor * h_target
    l_min = config.l_min_factor * h_target
    lr = config.learning_rate * extent

    # refine coarse seeds (e.g. a raw convex hull) up front, otherwise the
    # first gradient steps act on faces far larger than the target detail
    moments0 = [(np.zeros(3), np.zeros(3))] * len(verts)
    for _ in range(12):
        edges_v = verts[f[:, [1, 2, 0]]] - verts[f]
        if np.linalg.norm(edges_v, axis=-1).max() <= l_max:
            break
        verts, f, moments0 = _split_pass(verts, f, list(moments0), l_max)

    m = np.array([mm[0] for mm in moments0])
    v2 = np.array([mm[1] for mm in moments0])
    t_step = 0
    history = []
    last_valid = (verts.copy(), f.copy())

    for it in range(config.iterations):
        loss, grad = _loss_and_grad(verts, f, targets, cameras, config,
                                    config.threads)
        history.append(loss)
        t_step += 1
        m = 0.9 * m + 0.1 * grad
        v2 = 0.999 * v2 + 0.001 * grad * grad
        mh = m / (1 - 0.9**t_step)
        vh = v2 / (1 - 0.999**t_step)
        warm = min(1.0, (it + 1) / max(config.lr_warmup, 1))
        frac = it / max(config.iterations - 1, 1)
        decay = 1.0 - (1.0 - config.lr_decay) * frac
        verts -= lr * warm * decay * mh / (np.sqrt(vh) + 1e-8)
        ramp = min(1.0, (it + 1) / max(config.relax_ramp, 1))
        verts = _tangential_relax(verts, f, config.relax * ramp)

        moments = list(zip(m, v2))
        snap = (verts.copy(), f.copy(), m.copy(), v2.copy())
        verts, f, moments = _split_pass(verts, f, moments, l_max)
        verts, f, moments = _collapse_pass(verts, f, moments, l_min,
                                           config.crease_cos)
        f = _flip_pass(verts, f, config.crease_cos)
        if not is_watertight_manifold(verts, f):
            # topology pass failed a guard: revert the pass, keep optimizing
            verts, f, m, v2 = snap
        else:
            m = np.array([mm[0] for mm in moments])
            v2 = np.array([mm[1] for mm in moments])

        if ((it + 1) % config.check_every == 0
                or it + 1 == config.iterations):
            if has_self_intersections(verts, f):
                return RemeshResult(last_valid[0], last_valid[1], True,
                                    history)
            last_valid = (verts.copy(), f.copy())

    return RemeshResult(verts, f, False, history)
