import os
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

MESH_LABELS = ('hand', 'arm', 'probe', 'other')

# Segmentation ids; 'other' objects render but are not labelled.
SEGMENTATION_IDS = {'hand': 1, 'arm': 2, 'probe': 3, 'other': 0}

SUPPORTED_MESH_EXTENSIONS = ('.obj',)


class MeshParseError(ValueError):
    pass


class EmptyMeshError(ValueError):
    pass


class MeshIndexError(ValueError):
    pass


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Indexed triangle mesh in meters.

    triangle_labels optionally overrides `label` per triangle; the hand rig
    uses it to mark forearm faces inside the hand mesh.
    """
    vertices: np.ndarray
    triangles: np.ndarray
    label: str = 'other'
    triangle_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64)
        triangles = np.asarray(self.triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshParseError(f"Vertices must have shape (N, 3), got {vertices.shape}")
        if triangles.size == 0:
            triangles = triangles.reshape(0, 3)
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshParseError(f"Triangles must have shape (M, 3), got {triangles.shape}")
        if self.label not in MESH_LABELS:
            raise ValueError(f"Unknown mesh label '{self.label}', expected one of {MESH_LABELS}")
        if len(vertices) == 0 or len(triangles) == 0:
            raise EmptyMeshError(f"Mesh has {len(vertices)} vertices and {len(triangles)} triangles")
        if not np.all(np.isfinite(vertices)):
            raise MeshParseError("Mesh contains non-finite vertex coordinates")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            bad = int(triangles.max()) if triangles.max() >= len(vertices) else int(triangles.min())
            raise MeshIndexError(f"Triangle references vertex index {bad} of {len(vertices)}")
        degenerate = ((triangles[:, 0] == triangles[:, 1]) |
                      (triangles[:, 1] == triangles[:, 2]) |
                      (triangles[:, 0] == triangles[:, 2]))
        if np.any(degenerate):
            first = int(np.flatnonzero(degenerate)[0])
            raise MeshIndexError(f"Triangle {first} repeats a vertex index: {triangles[first].tolist()}")

        object.__setattr__(self, 'vertices', _frozen(vertices, np.float64))
        object.__setattr__(self, 'triangles', _frozen(triangles, np.int64))
        if self.triangle_labels is not None:
            labels = np.asarray(self.triangle_labels, dtype='<U8')
            if labels.shape != (len(triangles),):
                raise ValueError(f"triangle_labels must have one entry per triangle ({len(triangles)})")
            unknown = set(labels.tolist()) - set(MESH_LABELS)
            if unknown:
                raise ValueError(f"Unknown triangle labels: {sorted(unknown)}")
            object.__setattr__(self, 'triangle_labels', _frozen(labels, '<U8'))

    @property
    def vertex_count(self):
        return len(self.vertices)

    @property
    def triangle_count(self):
        return len(self.triangles)

    def labels_per_triangle(self):
        if self.triangle_labels is not None:
            return self.triangle_labels
        return np.full(len(self.triangles), self.label, dtype='<U8')

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def centroid(self):
        return self.vertices.mean(axis=0)

    def with_vertices(self, vertices):
        return TriMesh(vertices, self.triangles, self.label, self.triangle_labels)

    def transformed(self, rotation, translation):
        """Apply x -> R x + t to every vertex."""
        rotation = np.asarray(rotation, dtype=np.float64)
        translation = np.asarray(translation, dtype=np.float64)
        return self.with_vertices(self.vertices @ rotation.T + translation)

    def submesh(self, label):
        """Triangles carrying `label`, with unused vertices dropped. None when there are none."""
        mask = self.labels_per_triangle() == label
        if not np.any(mask):
            return None
        triangles = self.triangles[mask]
        used, inverse = np.unique(triangles.ravel(), return_inverse=True)
        return TriMesh(self.vertices[used], inverse.reshape(-1, 3), label)

    def split_by_label(self) -> Dict[str, 'TriMesh']:
        parts = {}
        for label in MESH_LABELS:
            part = self.submesh(label)
            if part is not None:
                parts[label] = part
        return parts

    def is_watertight(self):
        """True when every undirected edge is shared by exactly two triangles."""
        tris = self.triangles
        edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


def _parse_face_index(token, vertex_count, line_number):
    head = token.split('/')[0]
    try:
        index = int(head)
    except ValueError:
        raise MeshParseError(f"Line {line_number}: invalid face index '{token}'")
    if index == 0:
        raise MeshIndexError(f"Line {line_number}: OBJ face indices are 1-based, got 0")
    if index < 0:
        # relative to the vertices read so far
        return vertex_count + index
    return index - 1


def load_mesh(path, label='other') -> TriMesh:
    """
    Load a Wavefront OBJ mesh made of triangles.

    Vertex order follows the file. Normals, texture coordinates, groups and
    materials are ignored; faces with more than three vertices are rejected.
    """
    if not os.path.exists(path):
        error_msg = f"Mesh file not found: {path}"
        logging.error(error_msg)
        raise FileNotFoundError(error_msg)

    extension = os.path.splitext(path)[1].lower()
    if extension not in SUPPORTED_MESH_EXTENSIONS:
        error_msg = f"Unsupported mesh format '{extension}' for {path}, expected one of {SUPPORTED_MESH_EXTENSIONS}"
        logging.error(error_msg)
        raise MeshParseError(error_msg)

    vertices = []
    triangles = []
    try:
        with open(path, 'r') as f:
            for line_number, line in enumerate(f, start=1):
                tokens = line.strip().split()
                if not tokens or tokens[0].startswith('#'):
                    continue
                if tokens[0] == 'v':
                    if len(tokens) < 4:
                        raise MeshParseError(f"Line {line_number}: vertex needs three coordinates")
                    try:
                        vertices.append([float(x) for x in tokens[1:4]])
                    except ValueError:
                        raise MeshParseError(f"Line {line_number}: invalid vertex '{line.strip()}'")
                elif tokens[0] == 'f':
                    if len(tokens) != 4:
                        raise MeshParseError(
                            f"Line {line_number}: only triangular faces are supported, got {len(tokens) - 1} vertices")
                    triangles.append([_parse_face_index(t, len(vertices), line_number) for t in tokens[1:]])
    except UnicodeDecodeError as e:
        error_msg = f"Error reading mesh file {path}: {str(e)}"
        logging.error(error_msg)
        raise MeshParseError(error_msg)
    except (MeshParseError, MeshIndexError) as e:
        logging.error(f"Error parsing mesh file {path}: {str(e)}")
        raise

    if not vertices or not triangles:
        error_msg = f"Mesh file {path} has {len(vertices)} vertices and {len(triangles)} triangles"
        logging.error(error_msg)
        raise EmptyMeshError(error_msg)

    try:
        mesh = TriMesh(np.array(vertices), np.array(triangles, dtype=np.int64), label)
    except (MeshParseError, MeshIndexError, EmptyMeshError) as e:
        logging.error(f"Invalid mesh in {path}: {str(e)}")
        raise
    logging.info(f"Loaded mesh {path}: {mesh.vertex_count} vertices, {mesh.triangle_count} triangles")
    return mesh


def save_obj(mesh: TriMesh, path):
    with open(path, 'w') as f:
        for v in mesh.vertices:
            f.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for tri in mesh.triangles:
            f.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")
