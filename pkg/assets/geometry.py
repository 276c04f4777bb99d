import logging
from dataclasses import dataclass

import numpy as np

from assets.mesh import TriMesh

DEFAULT_BPS_COUNT = 1024
BPS_RADIUS_SCALE = 1.1

# Rows per distance block; bounds the (rows, cols) scratch matrix.
_CHUNK_ROWS = 256

# Skewed direction for the ray-parity test so rays avoid running along mesh edges.
_PARITY_DIRECTION = np.array([1.0, 0.1234567, 0.0765432]) / np.linalg.norm([1.0, 0.1234567, 0.0765432])


def _as_points(points, what):
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        error_msg = f"{what} is empty"
        logging.error(error_msg)
        raise ValueError(error_msg)
    points = points.reshape(-1, 3)
    if not np.all(np.isfinite(points)):
        error_msg = f"{what} contains non-finite coordinates"
        logging.error(error_msg)
        raise ValueError(error_msg)
    return points


def nearest_distances(queries, cloud):
    """
    For every query point, the Euclidean distance to its nearest cloud point.

    Squared components are summed in x, y, z order before the square root, so
    results match a plain double loop bit for bit.
    """
    result = np.empty(len(queries))
    for start in range(0, len(queries), _CHUNK_ROWS):
        block = queries[start:start + _CHUNK_ROWS]
        dx = block[:, None, 0] - cloud[None, :, 0]
        dy = block[:, None, 1] - cloud[None, :, 1]
        dz = block[:, None, 2] - cloud[None, :, 2]
        squared = dx * dx + dy * dy + dz * dz
        result[start:start + len(block)] = np.sqrt(squared.min(axis=1))
    return result


@dataclass(frozen=True, eq=False)
class BasisPointSet:
    basis_points: np.ndarray
    seed: int

    def __post_init__(self):
        points = np.array(self.basis_points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            raise ValueError("Basis point set must contain at least one point")
        points.setflags(write=False)
        object.__setattr__(self, 'basis_points', points)

    @property
    def count(self):
        return len(self.basis_points)

    @classmethod
    def sample(cls, count=DEFAULT_BPS_COUNT, radius=1.0, center=(0.0, 0.0, 0.0), seed=0):
        """Uniform samples inside a ball; same arguments give the same points."""
        if count <= 0:
            raise ValueError(f"Basis point count must be positive, got {count}")
        rng = np.random.default_rng(seed)
        directions = rng.standard_normal((count, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = radius * rng.random(count) ** (1.0 / 3.0)
        points = np.asarray(center, dtype=np.float64) + directions * radii[:, None]
        return cls(points, seed)

    @classmethod
    def for_mesh(cls, mesh: TriMesh, count=DEFAULT_BPS_COUNT, seed=0):
        """Basis ball around a mesh: bounding-box center, 1.1x its bounding-sphere radius."""
        lo, hi = mesh.bounds()
        center = (lo + hi) / 2.0
        radius = float(np.max(np.linalg.norm(mesh.vertices - center, axis=1)))
        return cls.sample(count, BPS_RADIUS_SCALE * radius, center, seed)


def bps_encode(cloud, basis: BasisPointSet):
    """Distance from each basis point to the nearest cloud point."""
    cloud = _as_points(cloud, "Point cloud")
    return nearest_distances(basis.basis_points, cloud)


def hand_object_distances(hand_vertices, probe_vertices):
    """Per hand vertex, the distance to the closest probe vertex."""
    hand = _as_points(hand_vertices, "Hand vertex list")
    probe = _as_points(probe_vertices, "Probe vertex list")
    return nearest_distances(hand, probe)


def points_inside_mesh(points, mesh: TriMesh):
    """
    Ray-parity inside test against a closed mesh.

    Only meaningful for watertight meshes; callers check `mesh.is_watertight()`.
    """
    points = _as_points(points, "Point list")
    tris = mesh.vertices[mesh.triangles]
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    h = np.cross(_PARITY_DIRECTION, e2)
    a = np.einsum('ij,ij->i', e1, h)
    usable = np.abs(a) > 1e-15
    v0, e1, e2, h, a = v0[usable], e1[usable], e2[usable], h[usable], a[usable]
    inv_a = 1.0 / a

    inside = np.zeros(len(points), dtype=bool)
    for i, p in enumerate(points):
        s = p - v0
        u = inv_a * np.einsum('ij,ij->i', s, h)
        q = np.cross(s, e1)
        v = inv_a * (q @ _PARITY_DIRECTION)
        t = inv_a * np.einsum('ij,ij->i', e2, q)
        hits = (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 1e-12)
        inside[i] = bool(np.count_nonzero(hits) % 2)
    return inside
