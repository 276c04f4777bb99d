import os
import json
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from assets.mesh import TriMesh

RIG_FORMAT_VERSION = 'graspsphere.rig/1'

FINGER_NAMES = ('thumb', 'index', 'middle', 'ring', 'little')
FINGER_JOINT_NAMES = ('mcp', 'pip', 'dip', 'tip')
KEYPOINT_COUNT = 21


class RigError(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    name: str
    parent: Optional[int]
    rest_rotation: np.ndarray
    rest_translation: np.ndarray

    def local_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rest_rotation
        m[:3, 3] = self.rest_translation
        return m


def _rigid_inverse(m):
    inv = np.eye(4)
    inv[:3, :3] = m[:3, :3].T
    inv[:3, 3] = -m[:3, :3].T @ m[:3, 3]
    return inv


@dataclass(frozen=True, eq=False)
class HandRig:
    """
    Skeleton + linear-blend skin for a hand and forearm.

    skin_weights is a dense (vertex, joint) matrix; `weight_pairs` gives the
    sparse (joint, weight) view stored in rig files.
    """
    joints: Tuple[Joint, ...]
    skin_weights: np.ndarray
    mesh: TriMesh
    keypoint_map: Tuple[int, ...]

    def __post_init__(self):
        joints = tuple(self.joints)
        object.__setattr__(self, 'joints', joints)
        if not joints:
            raise RigError("Rig has no joints")
        if joints[0].parent is not None:
            raise RigError(f"Root joint '{joints[0].name}' must not have a parent")
        for index, joint in enumerate(joints[1:], start=1):
            if joint.parent is None or not 0 <= joint.parent < index:
                raise RigError(f"Joint {index} ('{joint.name}') parent {joint.parent} must precede it")

        weights = np.array(self.skin_weights, dtype=np.float64)
        if weights.shape != (self.mesh.vertex_count, len(joints)):
            raise RigError(f"Skin weights have shape {weights.shape}, expected "
                           f"({self.mesh.vertex_count}, {len(joints)})")
        if np.any(weights < 0):
            raise RigError("Skin weights must be non-negative")
        sums = weights.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            worst = int(np.argmax(np.abs(sums - 1.0)))
            raise RigError(f"Skin weights of vertex {worst} sum to {sums[worst]}, expected 1")
        weights.setflags(write=False)
        object.__setattr__(self, 'skin_weights', weights)

        keypoint_map = tuple(int(k) for k in self.keypoint_map)
        if len(keypoint_map) != KEYPOINT_COUNT:
            raise RigError(f"Keypoint map has {len(keypoint_map)} entries, expected {KEYPOINT_COUNT}")
        if any(not 0 <= k < len(joints) for k in keypoint_map):
            raise RigError(f"Keypoint map references joints outside 0..{len(joints) - 1}")
        object.__setattr__(self, 'keypoint_map', keypoint_map)

    @property
    def joint_count(self):
        return len(self.joints)

    def weight_pairs(self, vertex_index):
        row = self.skin_weights[vertex_index]
        return [(int(j), float(row[j])) for j in np.flatnonzero(row)]

    def global_transforms(self, joint_rotations=None):
        """World matrices of every joint; joint_rotations are local axis-angle rotations."""
        count = self.joint_count
        if joint_rotations is None:
            pose_matrices = np.broadcast_to(np.eye(3), (count, 3, 3))
        else:
            pose_matrices = Rotation.from_rotvec(np.array(joint_rotations, dtype=np.float64)).as_matrix()
        transforms = np.zeros((count, 4, 4))
        for index, joint in enumerate(self.joints):
            local = joint.local_matrix()
            posed = np.eye(4)
            posed[:3, :3] = pose_matrices[index]
            local = local @ posed
            transforms[index] = local if joint.parent is None else transforms[joint.parent] @ local
        return transforms


def skin_hand(rig: HandRig, pose) -> Tuple[TriMesh, np.ndarray]:
    """
    Linear blend skinning of the rig mesh for a grasp pose.

    Returns the posed mesh and the 21 keypoints (posed joint origins), both
    shifted by the pose's hand translation.
    """
    rotations = np.asarray(pose.joint_rotations, dtype=np.float64)
    if rotations.shape != (rig.joint_count, 3):
        error_msg = (f"Grasp '{pose.grasp_id}' has {len(rotations)} joint rotations, "
                     f"rig has {rig.joint_count} joints")
        logging.error(error_msg)
        raise RigError(error_msg)

    rest = rig.global_transforms()
    posed = rig.global_transforms(rotations)
    skinning = np.stack([posed[j] @ _rigid_inverse(rest[j]) for j in range(rig.joint_count)])

    blended = np.einsum('vj,jab->vab', rig.skin_weights, skinning)
    vertices = np.einsum('vab,vb->va', blended[:, :3, :3], rig.mesh.vertices) + blended[:, :3, 3]
    translation = np.asarray(pose.hand_translation, dtype=np.float64)
    vertices = vertices + translation

    joints_3d = posed[list(rig.keypoint_map), :3, 3] + translation
    return rig.mesh.with_vertices(vertices), joints_3d


# Procedural capsule rig

_FINGER_LAYOUT = {
    # MCP position relative to the wrist, direction, segment lengths, radius
    'thumb': ((-0.030, 0.025, -0.010), (-0.6, 0.8, -0.1), (0.045, 0.032, 0.028), 0.011),
    'index': ((-0.030, 0.090, 0.0), (0.0, 1.0, 0.0), (0.040, 0.025, 0.020), 0.009),
    'middle': ((-0.010, 0.095, 0.0), (0.0, 1.0, 0.0), (0.045, 0.028, 0.022), 0.009),
    'ring': ((0.010, 0.090, 0.0), (0.0, 1.0, 0.0), (0.042, 0.026, 0.021), 0.0085),
    'little': ((0.030, 0.082, 0.0), (0.0, 1.0, 0.0), (0.033, 0.020, 0.018), 0.008),
}


def _capsule(start, end, radius, sides=6):
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    axis = end - start
    axis = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    angles = 2.0 * np.pi * np.arange(sides) / sides
    ring = radius * (np.outer(np.cos(angles), e1) + np.outer(np.sin(angles), e2))
    vertices = np.concatenate([
        start + ring,
        end + ring,
        [start - axis * radius * 0.6, end + axis * radius * 0.6],
    ])
    cap0, cap1 = 2 * sides, 2 * sides + 1
    triangles = []
    for i in range(sides):
        a0, a1 = i, (i + 1) % sides
        b0, b1 = sides + i, sides + (i + 1) % sides
        triangles += [(a0, a1, b1), (a0, b1, b0), (cap0, a1, a0), (cap1, b0, b1)]
    return vertices, np.array(triangles, dtype=np.int64)


def _box(lo, hi):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    vertices = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    triangles = np.array([
        (0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5),
        (0, 4, 5), (0, 5, 1), (2, 3, 7), (2, 7, 6),
        (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3),
    ], dtype=np.int64)
    return vertices, triangles


def build_capsule_rig() -> HandRig:
    """
    Low-poly right hand + forearm: wrist root at the origin, fingers along +y,
    palm facing -z, thumb on the -x side. 21 joints, identity keypoint map.
    """
    joints = [Joint('wrist', None, np.eye(3), np.zeros(3))]
    positions = [np.zeros(3)]
    for finger in FINGER_NAMES:
        base, direction, lengths, _ = _FINGER_LAYOUT[finger]
        direction = np.asarray(direction) / np.linalg.norm(direction)
        parent, point = 0, np.asarray(base, dtype=np.float64)
        for step, joint_name in enumerate(FINGER_JOINT_NAMES):
            if step > 0:
                point = positions[parent] + direction * lengths[step - 1]
            joints.append(Joint(f"{finger}_{joint_name}", parent, np.eye(3), point - positions[parent]))
            positions.append(point)
            parent = len(joints) - 1

    parts = []  # (vertices, triangles, label, joint)
    for finger_index, finger in enumerate(FINGER_NAMES):
        radius = _FINGER_LAYOUT[finger][3]
        first = 1 + 4 * finger_index
        for segment in range(3):
            joint = first + segment
            vertices, triangles = _capsule(positions[joint], positions[joint + 1], radius)
            parts.append((vertices, triangles, 'hand', joint))
    palm = _box((-0.042, -0.005, -0.014), (0.042, 0.092, 0.014))
    parts.append((palm[0], palm[1], 'hand', 0))
    forearm = _capsule((0.0, -0.26, 0.0), (0.0, -0.012, 0.0), 0.03, sides=8)
    parts.append((forearm[0], forearm[1], 'arm', 0))

    all_vertices, all_triangles, labels, weights = [], [], [], []
    offset = 0
    for vertices, triangles, label, joint in parts:
        all_vertices.append(vertices)
        all_triangles.append(triangles + offset)
        labels += [label] * len(triangles)
        row = np.zeros((len(vertices), len(joints)))
        row[:, joint] = 1.0
        weights.append(row)
        offset += len(vertices)

    mesh = TriMesh(np.concatenate(all_vertices), np.concatenate(all_triangles), 'hand', np.array(labels))
    return HandRig(tuple(joints), np.concatenate(weights), mesh, tuple(range(KEYPOINT_COUNT)))


# Rig files

def save_rig(rig: HandRig, path):
    data = {
        'format_version': RIG_FORMAT_VERSION,
        'joints': [{
            'name': joint.name,
            'parent': joint.parent,
            'rotation': Rotation.from_matrix(np.array(joint.rest_rotation, dtype=np.float64)).as_rotvec().tolist(),
            'translation': np.asarray(joint.rest_translation).tolist(),
        } for joint in rig.joints],
        'keypoint_map': list(rig.keypoint_map),
        'mesh': {
            'vertices': rig.mesh.vertices.tolist(),
            'triangles': rig.mesh.triangles.tolist(),
            'triangle_labels': rig.mesh.labels_per_triangle().tolist(),
        },
        'skin_weights': [[[j, w] for j, w in rig.weight_pairs(v)] for v in range(rig.mesh.vertex_count)],
    }
    with open(path, 'w') as f:
        json.dump(data, f, indent=1, sort_keys=True)
    logging.info(f"Saved rig with {rig.joint_count} joints to {path}")


def load_rig(path) -> HandRig:
    """
    Load a rig JSON file (format graspsphere.rig/1).

    Raises:
        FileNotFoundError: when the file is missing
        RigError: on schema or invariant violations
    """
    if not os.path.exists(path):
        error_msg = f"Rig file not found: {path}"
        logging.error(error_msg)
        raise FileNotFoundError(error_msg)
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        error_msg = f"Error parsing rig file {path}: {str(e)}"
        logging.error(error_msg)
        raise RigError(error_msg)

    if data.get('format_version') != RIG_FORMAT_VERSION:
        error_msg = f"Rig file {path} has format {data.get('format_version')!r}, expected {RIG_FORMAT_VERSION!r}"
        logging.error(error_msg)
        raise RigError(error_msg)

    try:
        joints: List[Joint] = [
            Joint(entry['name'], entry['parent'],
                  Rotation.from_rotvec(entry['rotation']).as_matrix(),
                  np.asarray(entry['translation'], dtype=np.float64))
            for entry in data['joints']
        ]
        mesh_data = data['mesh']
        mesh = TriMesh(np.asarray(mesh_data['vertices']), np.asarray(mesh_data['triangles']),
                       'hand', np.asarray(mesh_data['triangle_labels']))
        weights = np.zeros((mesh.vertex_count, len(joints)))
        for vertex, pairs in enumerate(data['skin_weights']):
            for joint, weight in pairs:
                weights[vertex, joint] = weight
        rig = HandRig(tuple(joints), weights, mesh, tuple(data['keypoint_map']))
    except (KeyError, TypeError, IndexError) as e:
        error_msg = f"Rig file {path} is missing or has malformed fields: {str(e)}"
        logging.error(error_msg)
        raise RigError(error_msg)
    logging.info(f"Loaded rig {path}: {rig.joint_count} joints, {mesh.vertex_count} vertices")
    return rig
