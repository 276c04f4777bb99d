import os
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.io import loadmat
from scipy.spatial.transform import Rotation

from assets.mesh import TriMesh
from assets.rig import HandRig, skin_hand
from assets.geometry import hand_object_distances, points_inside_mesh

GRASP_FORMAT_VERSION = 'graspsphere.grasp/1'

# Fixed probe displacement between the grasp-generation frame and the render frame.
DEFAULT_Z_OFFSET = 0.07189549170510294

DEFAULT_CONTACT_THRESHOLD = 0.005

GLOVE_COLORS = (
    (0.5647058824, 0.5921568627, 0.768627451),
    (0.38039215686, 0.61960784314, 0.8666666667),
)
ARM_COLOR = (1.0, 0.6784313725, 0.3764705882)
PROBE_COLOR = (0.82, 0.82, 0.8)

SUPPORTED_GRASP_EXTENSIONS = ('.json', '.mat')


class GraspFileError(ValueError):
    pass


def _rgb(values, what):
    values = tuple(float(c) for c in values)
    if len(values) != 3 or any(not 0.0 <= c <= 1.0 for c in values):
        raise ValueError(f"{what} must be three values in [0, 1], got {values}")
    return values


@dataclass(frozen=True, eq=False)
class GraspPose:
    """Hand translation + per-joint axis-angle rotations, and the probe's Euler angles (degrees)."""
    grasp_id: str
    hand_translation: np.ndarray
    joint_rotations: np.ndarray
    probe_euler_deg: np.ndarray

    def __post_init__(self):
        translation = np.array(self.hand_translation, dtype=np.float64).reshape(-1)
        if translation.shape != (3,) or not np.all(np.isfinite(translation)):
            raise ValueError(f"Grasp '{self.grasp_id}': hand_translation must be 3 finite values")
        rotations = np.array(self.joint_rotations, dtype=np.float64)
        if rotations.ndim != 2 or rotations.shape[1] != 3 or not np.all(np.isfinite(rotations)):
            raise ValueError(f"Grasp '{self.grasp_id}': joint_rotations must be a (J, 3) array of finite values")
        euler = np.array(self.probe_euler_deg, dtype=np.float64).reshape(-1)
        if euler.shape != (3,) or np.any(euler < 0.0) or np.any(euler >= 360.0):
            raise ValueError(f"Grasp '{self.grasp_id}': probe_euler_deg must be 3 angles in [0, 360)")
        for name, array in (('hand_translation', translation), ('joint_rotations', rotations),
                            ('probe_euler_deg', euler)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        object.__setattr__(self, 'grasp_id', str(self.grasp_id))

    def probe_rotation(self):
        return Rotation.from_euler('xyz', np.array(self.probe_euler_deg), degrees=True).as_matrix()

    def to_dict(self):
        return {
            'format_version': GRASP_FORMAT_VERSION,
            'grasp_id': self.grasp_id,
            'hand_translation': self.hand_translation.tolist(),
            'joint_rotations': self.joint_rotations.tolist(),
            'probe_euler_deg': self.probe_euler_deg.tolist(),
        }


@dataclass(frozen=True)
class TextureSpec:
    glove_rgb: Tuple[float, float, float] = GLOVE_COLORS[0]
    arm_rgb: Tuple[float, float, float] = ARM_COLOR

    def __post_init__(self):
        object.__setattr__(self, 'glove_rgb', _rgb(self.glove_rgb, 'glove_rgb'))
        object.__setattr__(self, 'arm_rgb', _rgb(self.arm_rgb, 'arm_rgb'))


@dataclass(frozen=True, eq=False)
class ProbeModel:
    """
    Probe mesh in its object frame.

    corner_source is the (min, max) box whose corners become the object
    keypoints; it defaults to the mesh's axis-aligned bounds.
    """
    mesh: TriMesh
    z_offset: float = DEFAULT_Z_OFFSET
    corner_source: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None)

    def __post_init__(self):
        if not np.isfinite(self.z_offset):
            raise ValueError(f"Probe z_offset must be finite, got {self.z_offset}")
        object.__setattr__(self, 'z_offset', float(self.z_offset))
        if self.corner_source is None:
            lo, hi = self.mesh.bounds()
        else:
            lo, hi = (np.asarray(c, dtype=np.float64) for c in self.corner_source)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(lo > hi):
            raise ValueError(f"Probe corner box must satisfy min <= max componentwise, got {lo} / {hi}")
        object.__setattr__(self, 'corner_source', (lo.copy(), hi.copy()))

    def pose(self, grasp: GraspPose):
        """Probe at the origin, oriented by the grasp's Euler angles, z-offset corrected."""
        return grasp.probe_rotation(), apply_z_offset(np.zeros(3), self.z_offset)


def apply_z_offset(probe_translation, dz):
    translation = np.asarray(probe_translation, dtype=np.float64)
    return translation + np.array([0.0, 0.0, -float(dz)])


def object_corner_keypoints(probe: ProbeModel, rotation, translation):
    """
    The 8 corners of the probe's corner box under x -> R x + t.

    Order: x varies slowest, z fastest, min before max on each axis.
    """
    lo, hi = probe.corner_source
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    rotation = np.asarray(rotation, dtype=np.float64)
    return corners @ rotation.T + np.asarray(translation, dtype=np.float64)


def estimate_z_offset(grasp_frame_mesh: TriMesh, render_frame_mesh: TriMesh):
    """
    The dz that moves the render-frame probe onto the grasp-frame probe via
    apply_z_offset, taken from the vertex centroids.
    """
    if grasp_frame_mesh.vertex_count != render_frame_mesh.vertex_count:
        logging.warning("Probe meshes differ in vertex count; comparing centroids anyway")
    return float(render_frame_mesh.centroid()[2] - grasp_frame_mesh.centroid()[2])


def build_probe_mesh():
    """
    Procedural linear-array probe: an elliptic loft along +z, transducer face
    at z=0, closed with a center vertex at each end.
    """
    stations = [  # z, half-width x, half-depth y
        (0.000, 0.021, 0.009),
        (0.008, 0.024, 0.012),
        (0.035, 0.019, 0.013),
        (0.090, 0.016, 0.014),
        (0.140, 0.013, 0.012),
        (0.155, 0.008, 0.008),
    ]
    sides = 16
    angles = 2.0 * np.pi * np.arange(sides) / sides
    vertices = []
    for z, a, b in stations:
        vertices += [[a * np.cos(t), b * np.sin(t), z] for t in angles]
    bottom = len(vertices)
    vertices.append([0.0, 0.0, stations[0][0]])
    top = len(vertices)
    vertices.append([0.0, 0.0, stations[-1][0]])

    triangles = []
    for ring in range(len(stations) - 1):
        for i in range(sides):
            a0 = ring * sides + i
            a1 = ring * sides + (i + 1) % sides
            b0, b1 = a0 + sides, a1 + sides
            triangles += [(a0, a1, b1), (a0, b1, b0)]
    last = (len(stations) - 1) * sides
    for i in range(sides):
        triangles.append((bottom, (i + 1) % sides, i))
        triangles.append((top, last + i, last + (i + 1) % sides))
    return TriMesh(np.array(vertices), np.array(triangles), 'probe')


# Grasp files

def _grasp_from_mapping(data, path):
    try:
        grasp_id = data['grasp_id']
        return GraspPose(grasp_id, data['hand_translation'], data['joint_rotations'], data['probe_euler_deg'])
    except KeyError as e:
        error_msg = f"Grasp file {path} is missing field {str(e)}"
        logging.error(error_msg)
        raise GraspFileError(error_msg)
    except (ValueError, TypeError) as e:
        error_msg = f"Invalid grasp in {path}: {str(e)}"
        logging.error(error_msg)
        raise GraspFileError(error_msg)


def _read_mat(path):
    try:
        raw = loadmat(path, squeeze_me=True)
    except (ValueError, OSError) as e:
        error_msg = f"Error reading MATLAB grasp file {path}: {str(e)}"
        logging.error(error_msg)
        raise GraspFileError(error_msg)
    data = {key: value for key, value in raw.items() if not key.startswith('__')}
    if 'grasp_id' in data:
        data['grasp_id'] = str(np.asarray(data['grasp_id']).item()) if np.ndim(data['grasp_id']) == 0 \
            else ''.join(np.asarray(data['grasp_id']).astype(str).tolist())
    else:
        data['grasp_id'] = os.path.splitext(os.path.basename(path))[0]
    if 'joint_rotations' in data:
        data['joint_rotations'] = np.asarray(data['joint_rotations'], dtype=np.float64).reshape(-1, 3)
    return data


def load_grasp_pose(path) -> GraspPose:
    """
    Load a grasp pose from JSON (format graspsphere.grasp/1) or from a MATLAB
    .mat file with the same field names.
    """
    if not os.path.exists(path):
        error_msg = f"Grasp file not found: {path}"
        logging.error(error_msg)
        raise FileNotFoundError(error_msg)

    extension = os.path.splitext(path)[1].lower()
    if extension == '.json':
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            error_msg = f"Error parsing grasp file {path}: {str(e)}"
            logging.error(error_msg)
            raise GraspFileError(error_msg)
        if data.get('format_version') != GRASP_FORMAT_VERSION:
            error_msg = (f"Grasp file {path} has format {data.get('format_version')!r}, "
                         f"expected {GRASP_FORMAT_VERSION!r}")
            logging.error(error_msg)
            raise GraspFileError(error_msg)
    elif extension == '.mat':
        data = _read_mat(path)
    else:
        error_msg = f"Unsupported grasp format '{extension}' for {path}, expected one of {SUPPORTED_GRASP_EXTENSIONS}"
        logging.error(error_msg)
        raise GraspFileError(error_msg)

    pose = _grasp_from_mapping(data, path)
    logging.info(f"Loaded grasp '{pose.grasp_id}' from {path}")
    return pose


def save_grasp_pose(pose: GraspPose, path):
    with open(path, 'w') as f:
        json.dump(pose.to_dict(), f, indent=2, sort_keys=True)


def convert_grasp_file(source, destination):
    """Rewrite any supported grasp file as grasp JSON."""
    pose = load_grasp_pose(source)
    save_grasp_pose(pose, destination)
    logging.info(f"Converted grasp '{pose.grasp_id}' from {source} to {destination}")
    return pose


# Validation

@dataclass(frozen=True)
class GraspReport:
    grasp_id: str
    contact_count: int
    min_distance: float
    penetration: Optional[bool]
    hand_vertex_count: int

    def to_dict(self):
        return {
            'grasp_id': self.grasp_id,
            'contact_count': self.contact_count,
            'min_distance_m': self.min_distance,
            'penetration': self.penetration,
            'hand_vertex_count': self.hand_vertex_count,
        }


def validate_grasp(rig: HandRig, pose: GraspPose, probe: ProbeModel,
                   contact_threshold=DEFAULT_CONTACT_THRESHOLD) -> GraspReport:
    """
    Geometric plausibility of a grasp: contacts closer than the threshold and
    hand vertices inside the posed probe.

    penetration is None when the probe mesh is not watertight.
    """
    if not contact_threshold > 0:
        error_msg = f"Contact threshold must be positive, got {contact_threshold}"
        logging.error(error_msg)
        raise ValueError(error_msg)

    posed, _ = skin_hand(rig, pose)
    hand = posed.submesh('hand')
    hand_vertices = hand.vertices if hand is not None else posed.vertices

    rotation, translation = probe.pose(pose)
    probe_world = probe.mesh.transformed(rotation, translation)
    distances = hand_object_distances(hand_vertices, probe_world.vertices)

    if probe.mesh.is_watertight():
        penetration = bool(np.any(points_inside_mesh(hand_vertices, probe_world)))
    else:
        logging.warning(f"Probe mesh is not watertight; penetration test unavailable for grasp '{pose.grasp_id}'")
        penetration = None

    report = GraspReport(pose.grasp_id, int(np.count_nonzero(distances < contact_threshold)),
                         float(distances.min()), penetration, len(hand_vertices))
    logging.info(f"Grasp '{pose.grasp_id}': {report.contact_count} contacts, "
                 f"min distance {report.min_distance:.4f} m, penetration {report.penetration}")
    return report
