"""Bounding-volume hierarchy over triangles: ray casting and distance queries.

Built once per posed frame (or per mesh for contact tests) with median
splits on the widest centroid axis. Ray queries are evaluated for whole
ray packets at a time with numpy, which is what makes full-frame tracing
tractable; brute-force reference implementations live alongside for the
equivalence oracles.

Tie-breaking: when two triangles yield the same ray parameter (shared
edge hits), the lower triangle index wins in both the BVH and the brute
force path, so the two stay exactly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_LEAF_TRIS = 16
_PARALLEL_EPS = 1e-12


@dataclass
class BVH:
    """Flat binary tree. Leaves reference ranges of a permuted triangle order."""

    node_min: np.ndarray   # (n, 3)
    node_max: np.ndarray   # (n, 3)
    node_left: np.ndarray  # (n,) child index or -1 for leaf
    node_right: np.ndarray
    node_start: np.ndarray  # (n,) leaf range into tri_order
    node_count: np.ndarray
    tri_order: np.ndarray   # (m,) permutation of triangle indices
    v0: np.ndarray          # (m, 3) triangle corners in original index order
    v1: np.ndarray
    v2: np.ndarray

    @property
    def num_triangles(self) -> int:
        return len(self.v0)


def build_bvh(v0: np.ndarray, v1: np.ndarray, v2: np.ndarray) -> BVH:
    """Median-split BVH over triangles given by their corner arrays."""
    m = len(v0)
    if m == 0:
        raise ValueError("cannot build a BVH over empty geometry")
    tri_min = np.minimum(np.minimum(v0, v1), v2)
    tri_max = np.maximum(np.maximum(v0, v1), v2)
    centroids = (tri_min + tri_max) * 0.5

    order = np.arange(m, dtype=np.int64)
    node_min, node_max = [], []
    node_left, node_right = [], []
    node_start, node_count = [], []

    # stack of (node_index, start, count); children patched after allocation
    def alloc(start, count):
        idx = len(node_min)
        sel = order[start : start + count]
        node_min.append(tri_min[sel].min(axis=0))
        node_max.append(tri_max[sel].max(axis=0))
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(start)
        node_count.append(count)
        return idx

    stack = [alloc(0, m)]
    while stack:
        ni = stack.pop()
        start, count = node_start[ni], node_count[ni]
        if count <= MAX_LEAF_TRIS:
            continue
        sel = order[start : start + count]
        c = centroids[sel]
        extent = c.max(axis=0) - c.min(axis=0)
        axis = int(np.argmax(extent))
        if extent[axis] < 1e-12:
            continue  # all centroids coincide: keep as leaf
        # stable median split keeps the build deterministic
        perm = np.argsort(c[:, axis], kind="stable")
        half = count // 2
        order[start : start + count] = sel[perm]
        li = alloc(start, half)
        ri = alloc(start + half, count - half)
        node_left[ni] = li
        node_right[ni] = ri
        node_start[ni] = -1
        node_count[ni] = 0
        stack.append(ri)
        stack.append(li)

    return BVH(
        node_min=np.asarray(node_min),
        node_max=np.asarray(node_max),
        node_left=np.asarray(node_left, dtype=np.int64),
        node_right=np.asarray(node_right, dtype=np.int64),
        node_start=np.asarray(node_start, dtype=np.int64),
        node_count=np.asarray(node_count, dtype=np.int64),
        tri_order=order,
        v0=np.ascontiguousarray(v0, dtype=np.float64),
        v1=np.ascontiguousarray(v1, dtype=np.float64),
        v2=np.ascontiguousarray(v2, dtype=np.float64),
    )


def build_bvh_from_mesh(mesh) -> BVH:
    a, b, c = mesh.triangle_corners()
    return build_bvh(a, b, c)


def _ray_tris(orig, dirs, a, b, c):
    """Moller-Trumbore for R rays x T triangles; returns (R, T) t or +inf.

    orig/dirs: (R, 3); a/b/c: (T, 3). Directions need not be unit length;
    t is expressed in direction units.
    """
    e1 = b - a
    e2 = c - a
    p = _cross_rows(dirs[:, None, :], e2[None, :, :])
    det = np.einsum("tk,rtk->rt", e1, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        s = orig[:, None, :] - a[None, :, :]
        u = np.einsum("rtk,rtk->rt", s, p) * inv
        q = _cross_rows(s, e1[None, :, :])
        v = np.einsum("rk,rtk->rt", dirs, q) * inv
        t = np.einsum("tk,rtk->rt", e2, q) * inv
        ok = (
            (np.abs(det) > _PARALLEL_EPS)
            & (u >= 0.0)
            & (u <= 1.0)
            & (v >= 0.0)
            & (u + v <= 1.0)
            & np.isfinite(t)
        )
    return np.where(ok, t, np.inf)


def _select_nearest(tvals, tri_ids, best_t, best_tri, rows):
    """Fold (subset rays x tris) hit candidates into the running best arrays."""
    tmin = tvals.min(axis=1)
    has = np.isfinite(tmin)
    if not np.any(has):
        return
    # among columns at the minimum t, take the lowest triangle id
    cand = np.where(tvals <= tmin[:, None], tri_ids[None, :], np.iinfo(np.int64).max)
    jtri = cand.min(axis=1)
    rows_h = rows[has]
    t_h = tmin[has]
    tri_h = jtri[has]
    better = (t_h < best_t[rows_h]) | ((t_h == best_t[rows_h]) & (tri_h < best_tri[rows_h]))
    upd = rows_h[better]
    best_t[upd] = t_h[better]
    best_tri[upd] = tri_h[better]


def intersect_rays(
    bvh: BVH,
    origins: np.ndarray,
    dirs: np.ndarray,
    t_min: float = 0.0,
    t_max: float = np.inf,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest triangle hit per ray, t restricted to (t_min, t_max).

    Returns (t, tri_index); misses get t = +inf and tri_index = -1.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(origins)
    if len(dirs) == 1 and n > 1:
        dirs = np.broadcast_to(dirs, (n, 3))
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)

    with np.errstate(divide="ignore"):
        inv_d = 1.0 / dirs

    # visit the child nearer along the packet's mean direction first, so
    # best_t tightens early and far subtrees get culled
    mean_dir = dirs.mean(axis=0)
    node_key = ((bvh.node_min + bvh.node_max) * 0.5) @ mean_dir

    stack: list[tuple[int, np.ndarray]] = [(0, np.arange(n, dtype=np.int64))]
    while stack:
        ni, rows = stack.pop()
        o = origins[rows]
        iv = inv_d[rows]
        with np.errstate(invalid="ignore"):
            t0 = (bvh.node_min[ni] - o) * iv
            t1 = (bvh.node_max[ni] - o) * iv
        near = np.fmin(t0, t1)
        far = np.fmax(t0, t1)
        # fmax/fmin skip NaNs from 0 * inf (ray on a slab boundary)
        entry = np.fmax(np.fmax(near[:, 0], near[:, 1]), np.fmax(near[:, 2], t_min))
        limit = np.minimum(best_t[rows], t_max)
        exit_ = np.fmin(np.fmin(far[:, 0], far[:, 1]), np.fmin(far[:, 2], limit))
        alive = entry <= exit_
        if not np.any(alive):
            continue
        if not np.all(alive):
            rows = rows[alive]
        if bvh.node_left[ni] < 0:
            s, cnt = bvh.node_start[ni], bvh.node_count[ni]
            ids = bvh.tri_order[s : s + cnt]
            tv = _ray_tris(origins[rows], dirs[rows], bvh.v0[ids], bvh.v1[ids], bvh.v2[ids])
            tv = np.where((tv > t_min) & (tv < t_max), tv, np.inf)
            _select_nearest(tv, ids, best_t, best_tri, rows)
        else:
            left, right = int(bvh.node_left[ni]), int(bvh.node_right[ni])
            if node_key[left] <= node_key[right]:
                stack.append((right, rows))
                stack.append((left, rows))
            else:
                stack.append((left, rows))
                stack.append((right, rows))
    return best_t, best_tri


def intersect_rays_brute(
    v0: np.ndarray,
    v1: np.ndarray,
    v2: np.ndarray,
    origins: np.ndarray,
    dirs: np.ndarray,
    t_min: float = 0.0,
    t_max: float = np.inf,
    chunk: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """All-triangles reference: identical contract to :func:`intersect_rays`."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    tri_ids = np.arange(len(v0), dtype=np.int64)
    for s in range(0, n, chunk):
        rows = np.arange(s, min(s + chunk, n), dtype=np.int64)
        tv = _ray_tris(origins[rows], dirs[rows], v0, v1, v2)
        tv = np.where((tv > t_min) & (tv < t_max), tv, np.inf)
        _select_nearest(tv, tri_ids, best_t, best_tri, rows)
    return best_t, best_tri


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Broadcasting cross product without np.cross's axis-juggling overhead."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _finite_or_zero(v: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(v), v, 0.0)


def _point_tri_closest(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest points on triangles (T, 3) to a single point (Ericson 5.1.5)."""
    ab = b - a
    ac = c - a
    ap = p[None, :] - a
    d1 = np.einsum("tk,tk->t", ab, ap)
    d2 = np.einsum("tk,tk->t", ac, ap)
    bp = p[None, :] - b
    d3 = np.einsum("tk,tk->t", ab, bp)
    d4 = np.einsum("tk,tk->t", ac, bp)
    cp = p[None, :] - c
    d5 = np.einsum("tk,tk->t", ab, cp)
    d6 = np.einsum("tk,tk->t", ac, cp)

    out = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    def settle(mask, pts):
        m = mask & ~done
        if np.any(m):
            out[m] = pts[m] if pts.ndim == 2 else pts
            done[m] = True

    settle((d1 <= 0) & (d2 <= 0), a)  # vertex A
    settle((d3 >= 0) & (d4 <= d3), b)  # vertex B
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
    settle((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + _finite_or_zero(v_ab)[:, None] * ab)  # edge AB
    settle((d6 >= 0) & (d5 <= d6), c)  # vertex C
    vb = d5 * d2 - d1 * d6
    with np.errstate(divide="ignore", invalid="ignore"):
        w_ac = d2 / (d2 - d6)
    settle((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + _finite_or_zero(w_ac)[:, None] * ac)  # edge AC
    va = d3 * d6 - d5 * d4
    with np.errstate(divide="ignore", invalid="ignore"):
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    settle(
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
        b + _finite_or_zero(w_bc)[:, None] * (c - b),
    )  # edge BC
    # interior
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = vb / denom
        w = vc / denom
    settle(np.ones(len(a), dtype=bool), a + _finite_or_zero(v)[:, None] * ab + _finite_or_zero(w)[:, None] * ac)
    return out


def closest_distance_brute(v0, v1, v2, point: np.ndarray) -> float:
    """Min distance from a point to any triangle, exhaustive."""
    cp = _point_tri_closest(np.asarray(point, dtype=np.float64), v0, v1, v2)
    return float(np.min(np.linalg.norm(cp - point, axis=1)))


def closest_distance(bvh: BVH, point: np.ndarray) -> float:
    """Min distance from a point to the BVH's triangles, with box pruning."""
    p = np.asarray(point, dtype=np.float64)
    if bvh.num_triangles <= 64:
        # one vectorized pass beats node-by-node overhead on tiny meshes
        cp = _point_tri_closest(p, bvh.v0, bvh.v1, bvh.v2)
        d = cp - p
        return float(np.sqrt(np.min(np.einsum("tk,tk->t", d, d))))
    best = np.inf
    stack = [0]
    while stack:
        ni = stack.pop()
        lo = np.maximum(bvh.node_min[ni] - p, 0.0)
        hi = np.maximum(p - bvh.node_max[ni], 0.0)
        d_box = np.sqrt(np.sum(np.maximum(lo, hi) ** 2))
        if d_box >= best:
            continue
        if bvh.node_left[ni] < 0:
            s, cnt = bvh.node_start[ni], bvh.node_count[ni]
            ids = bvh.tri_order[s : s + cnt]
            cp = _point_tri_closest(p, bvh.v0[ids], bvh.v1[ids], bvh.v2[ids])
            d = float(np.min(np.linalg.norm(cp - p, axis=1)))
            best = min(best, d)
        else:
            stack.append(int(bvh.node_right[ni]))
            stack.append(int(bvh.node_left[ni]))
    return best
