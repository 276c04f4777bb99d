import logging
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

LEAF_SIZE = 4
STACK_SIZE = 64

# Minimum |det| for a ray/triangle pair to count as non-parallel.
_PARALLEL_EPS = 1e-15
# Hits closer than this along the ray are ignored (self-intersection).
_MIN_T = 1e-12
_INV_GUARD = 1e300


@dataclass(frozen=True, eq=False)
class Bvh:
    """
    Flattened bounding-volume hierarchy over world-space triangles.

    Node boxes are tight; traversal widens them by `pad`. Leaves reference
    `tri_order[leaf_start:leaf_start + leaf_count]`, which holds global
    triangle indices into v0/e1/e2.
    """
    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    tri_order: np.ndarray
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    object_ids: np.ndarray
    local_ids: np.ndarray
    pad: float

    @property
    def node_count(self):
        return len(self.node_min)

    @property
    def triangle_count(self):
        return len(self.v0)

    def is_leaf(self, node):
        return self.node_left[node] < 0

    def face_normals(self, triangles):
        n = np.cross(self.e1[triangles], self.e2[triangles])
        return n / np.linalg.norm(n, axis=1, keepdims=True)


def build_bvh_from_triangles(corners, object_ids=None, local_ids=None) -> Bvh:
    """
    Median-split BVH over (T, 3, 3) triangle corners.

    Each node splits its triangles at the median centroid along the longest
    centroid extent (stable sort), so construction is deterministic.
    """
    corners = np.asarray(corners, dtype=np.float64).reshape(-1, 3, 3)
    count = len(corners)
    if count == 0:
        error_msg = "Cannot build a BVH over an empty scene"
        logging.error(error_msg)
        raise ValueError(error_msg)
    object_ids = np.zeros(count, dtype=np.int64) if object_ids is None else np.asarray(object_ids, dtype=np.int64)
    local_ids = np.arange(count, dtype=np.int64) if local_ids is None else np.asarray(local_ids, dtype=np.int64)

    tri_min = corners.min(axis=1)
    tri_max = corners.max(axis=1)
    centroids = corners.mean(axis=1)

    node_min, node_max, node_left, node_right, leaf_start, leaf_count = [], [], [], [], [], []
    tri_order = []

    def new_node(indices):
        node_min.append(tri_min[indices].min(axis=0))
        node_max.append(tri_max[indices].max(axis=0))
        node_left.append(-1)
        node_right.append(-1)
        leaf_start.append(0)
        leaf_count.append(0)
        return len(node_min) - 1

    stack = [(new_node(np.arange(count)), np.arange(count))]
    while stack:
        node, indices = stack.pop()
        spread = centroids[indices].max(axis=0) - centroids[indices].min(axis=0)
        if len(indices) <= LEAF_SIZE or not np.any(spread > 0):
            leaf_start[node] = len(tri_order)
            leaf_count[node] = len(indices)
            tri_order.extend(indices.tolist())
            continue
        axis = int(np.argmax(spread))
        ordered = indices[np.argsort(centroids[indices, axis], kind='stable')]
        middle = len(ordered) // 2
        left, right = ordered[:middle], ordered[middle:]
        node_left[node] = new_node(left)
        node_right[node] = new_node(right)
        # right pushed first so the left subtree is laid out first
        stack.append((node_right[node], right))
        stack.append((node_left[node], left))

    extent = float(np.max(np.abs(corners)))
    bvh = Bvh(
        node_min=np.array(node_min), node_max=np.array(node_max),
        node_left=np.array(node_left, dtype=np.int64), node_right=np.array(node_right, dtype=np.int64),
        leaf_start=np.array(leaf_start, dtype=np.int64), leaf_count=np.array(leaf_count, dtype=np.int64),
        tri_order=np.array(tri_order, dtype=np.int64),
        v0=np.ascontiguousarray(corners[:, 0]),
        e1=np.ascontiguousarray(corners[:, 1] - corners[:, 0]),
        e2=np.ascontiguousarray(corners[:, 2] - corners[:, 0]),
        object_ids=object_ids, local_ids=local_ids,
        pad=1e-7 * max(1.0, extent),
    )
    logging.debug(f"Built BVH with {bvh.node_count} nodes over {count} triangles")
    return bvh


@njit(cache=True, error_model='numpy')
def _intersect(ox, oy, oz, dx, dy, dz, v0, e1, e2, tri):
    """Möller-Trumbore; returns the hit distance or inf."""
    hx = dy * e2[tri, 2] - dz * e2[tri, 1]
    hy = dz * e2[tri, 0] - dx * e2[tri, 2]
    hz = dx * e2[tri, 1] - dy * e2[tri, 0]
    a = e1[tri, 0] * hx + e1[tri, 1] * hy + e1[tri, 2] * hz
    if abs(a) < _PARALLEL_EPS:
        return np.inf
    f = 1.0 / a
    sx = ox - v0[tri, 0]
    sy = oy - v0[tri, 1]
    sz = oz - v0[tri, 2]
    u = f * (sx * hx + sy * hy + sz * hz)
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = sy * e1[tri, 2] - sz * e1[tri, 1]
    qy = sz * e1[tri, 0] - sx * e1[tri, 2]
    qz = sx * e1[tri, 1] - sy * e1[tri, 0]
    v = f * (dx * qx + dy * qy + dz * qz)
    if v < 0.0 or u + v > 1.0:
        return np.inf
    t = f * (e2[tri, 0] * qx + e2[tri, 1] * qy + e2[tri, 2] * qz)
    if t > _MIN_T:
        return t
    return np.inf


@njit(cache=True, error_model='numpy')
def _safe_inverse(d):
    if d == 0.0:
        return _INV_GUARD
    return 1.0 / d


@njit(cache=True, parallel=True, error_model='numpy')
def trace_rays(origins, directions, node_min, node_max, node_left, node_right, leaf_start, leaf_count,
               tri_order, v0, e1, e2, tri_enabled, pad):
    """
    Nearest enabled hit per ray through the BVH.

    Equal distances resolve to the lower triangle index. Returns (t, triangle),
    inf / -1 for misses.
    """
    n = origins.shape[0]
    hit_t = np.full(n, np.inf)
    hit_tri = np.full(n, -1, dtype=np.int64)
    for r in prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = directions[r, 0], directions[r, 1], directions[r, 2]
        ix, iy, iz = _safe_inverse(dx), _safe_inverse(dy), _safe_inverse(dz)
        best_t = np.inf
        best_tri = -1
        stack = np.empty(STACK_SIZE, dtype=np.int64)
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            t1 = (node_min[node, 0] - pad - ox) * ix
            t2 = (node_max[node, 0] + pad - ox) * ix
            tnear = min(t1, t2)
            tfar = max(t1, t2)
            t1 = (node_min[node, 1] - pad - oy) * iy
            t2 = (node_max[node, 1] + pad - oy) * iy
            tnear = max(tnear, min(t1, t2))
            tfar = min(tfar, max(t1, t2))
            t1 = (node_min[node, 2] - pad - oz) * iz
            t2 = (node_max[node, 2] + pad - oz) * iz
            tnear = max(tnear, min(t1, t2))
            tfar = min(tfar, max(t1, t2))
            if tnear > tfar or tfar < 0.0 or tnear > best_t:
                continue
            if node_left[node] < 0:
                start = leaf_start[node]
                for k in range(start, start + leaf_count[node]):
                    tri = tri_order[k]
                    if not tri_enabled[tri]:
                        continue
                    t = _intersect(ox, oy, oz, dx, dy, dz, v0, e1, e2, tri)
                    if t < best_t or (t == best_t and t < np.inf and tri < best_tri):
                        best_t = t
                        best_tri = tri
            else:
                stack[top] = node_right[node]
                stack[top + 1] = node_left[node]
                top += 2
        hit_t[r] = best_t
        hit_tri[r] = best_tri
    return hit_t, hit_tri


@njit(cache=True, parallel=True, error_model='numpy')
def brute_force_rays(origins, directions, v0, e1, e2, tri_enabled):
    """Reference: nearest hit over every enabled triangle, same tie rule as trace_rays."""
    n = origins.shape[0]
    hit_t = np.full(n, np.inf)
    hit_tri = np.full(n, -1, dtype=np.int64)
    for r in prange(n):
        best_t = np.inf
        best_tri = -1
        for tri in range(v0.shape[0]):
            if not tri_enabled[tri]:
                continue
            t = _intersect(origins[r, 0], origins[r, 1], origins[r, 2],
                           directions[r, 0], directions[r, 1], directions[r, 2], v0, e1, e2, tri)
            if t < best_t:
                best_t = t
                best_tri = tri
        hit_t[r] = best_t
        hit_tri[r] = best_tri
    return hit_t, hit_tri


def intersect(bvh: Bvh, origins, directions, tri_enabled=None, use_bvh=True):
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    if tri_enabled is None:
        tri_enabled = np.ones(bvh.triangle_count, dtype=np.bool_)
    if not use_bvh:
        return brute_force_rays(origins, directions, bvh.v0, bvh.e1, bvh.e2, tri_enabled)
    return trace_rays(origins, directions, bvh.node_min, bvh.node_max, bvh.node_left, bvh.node_right,
                      bvh.leaf_start, bvh.leaf_count, bvh.tri_order, bvh.v0, bvh.e1, bvh.e2,
                      tri_enabled, bvh.pad)
