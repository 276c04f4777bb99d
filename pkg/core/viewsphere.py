import math
import logging
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Tuple

import numpy as np

DEFAULT_R_SPH = 0.8
DEFAULT_R_CIRC = 0.15

# Absorbs rounding when a formula lands exactly on an integer.
_FLOOR_EPS = 1e-9

_UP_SWITCH = 0.999


@dataclass(frozen=True)
class SphereConfig:
    r_sph: float = DEFAULT_R_SPH
    r_circ: float = DEFAULT_R_CIRC
    include_poles: bool = True
    excluded_indices: FrozenSet[int] = field(default_factory=frozenset)
    # offset from the hand centroid; cameras aim at centroid + center
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (0 < self.r_circ <= self.r_sph):
            error_msg = f"Sphere config needs 0 < r_circ <= r_sph, got r_circ={self.r_circ}, r_sph={self.r_sph}"
            logging.error(error_msg)
            raise ValueError(error_msg)
        object.__setattr__(self, 'excluded_indices', frozenset(int(i) for i in self.excluded_indices))
        object.__setattr__(self, 'center', tuple(float(c) for c in self.center))

    def to_dict(self):
        return {
            'r_sph': self.r_sph,
            'r_circ': self.r_circ,
            'include_poles': self.include_poles,
            'excluded_indices': sorted(self.excluded_indices),
            'center': list(self.center),
        }


@dataclass(frozen=True, eq=False)
class Viewpoint:
    """A camera sample on the sphere; position is relative to the sphere center."""
    index: int
    theta: float
    phi: float
    position: np.ndarray
    euler_deg: Tuple[float, float, float]

    @property
    def direction(self):
        return self.position / np.linalg.norm(self.position)

    def to_dict(self):
        return {
            'index': self.index,
            'theta_deg': math.degrees(self.theta),
            'phi_deg': math.degrees(self.phi),
            'position': self.position.tolist(),
            'euler_deg': list(self.euler_deg),
        }


@dataclass(frozen=True, eq=False)
class CameraView:
    """
    Pinhole camera in OpenCV convention (x right, y down, z forward).

    rotation/translation map world points to camera space: p_c = R p_w + t.
    """
    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distance: float
    viewpoint: Optional[Viewpoint] = None

    def __post_init__(self):
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError(f"Principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")
        for name in ('rotation', 'translation'):
            array = np.array(getattr(self, name), dtype=np.float64)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def position(self):
        return -self.rotation.T @ self.translation

    @property
    def intrinsics(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def extrinsics(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def world_to_camera(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def pixel_rays(self, offsets=None):
        """
        World-space unit ray directions through every pixel, row-major (H*W, 3).
        offsets (H*W, 2) shifts samples from the pixel centers.
        """
        xs, ys = np.meshgrid(np.arange(self.width, dtype=np.float64), np.arange(self.height, dtype=np.float64))
        u = xs.ravel() + 0.5
        v = ys.ravel() + 0.5
        if offsets is not None:
            u = u + offsets[:, 0]
            v = v + offsets[:, 1]
        cam = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=1)
        cam /= np.linalg.norm(cam, axis=1, keepdims=True)
        return cam @ self.rotation

    @classmethod
    def look_at(cls, eye, target, width, height, vfov_deg, viewpoint=None):
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        forward = target - eye
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            error_msg = "Camera eye and target coincide; view direction is undefined"
            logging.error(error_msg)
            raise ValueError(error_msg)
        if not 0 < vfov_deg < 180:
            raise ValueError(f"Vertical field of view must be in (0, 180), got {vfov_deg}")
        forward = forward / norm
        up = np.array([0.0, 0.0, 1.0])
        if abs(forward @ up) > _UP_SWITCH:
            up = np.array([1.0, 0.0, 0.0])
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward])
        translation = -rotation @ eye

        fy = (height / 2.0) / math.tan(math.radians(vfov_deg) / 2.0)
        return cls(rotation, translation, fy, fy, width / 2.0, height / 2.0,
                   int(width), int(height), float(norm), viewpoint)

    def to_dict(self):
        return {
            'intrinsics': self.intrinsics.tolist(),
            'extrinsics': self.extrinsics.tolist(),
            'image_size': [self.width, self.height],
            'distance': self.distance,
        }


def latitude_floor_count(r_sph, r_circ):
    ratio = r_circ / r_sph
    if not 0 < ratio <= 1:
        error_msg = f"r_circ / r_sph must lie in (0, 1], got {ratio}"
        logging.error(error_msg)
        raise ValueError(error_msg)
    return int(math.floor(math.pi / (2.0 * math.asin(ratio)) + _FLOOR_EPS))


def circles_per_floor(r_sph, r_circ, theta_i):
    value = 2.0 * math.pi * r_sph * math.sin(theta_i) / (2.0 * r_circ)
    return max(0, int(math.floor(value + _FLOOR_EPS)))


def floor_angles(floor_count):
    """Polar angles of the latitude floors, centered in equal bands."""
    return [(i + 0.5) * math.pi / floor_count for i in range(floor_count)]


def euler_from_cartesian(position):
    """
    (roll, pitch, yaw) in degrees within [0, 360) for a sphere-centered position.
    atan2(0, 0) is taken as 0.
    """
    x, y, z = (float(c) for c in position)
    if x == 0.0 and y == 0.0 and z == 0.0:
        error_msg = "Cannot derive Euler angles from the zero vector"
        logging.error(error_msg)
        raise ValueError(error_msg)
    roll = math.atan2(y, x)
    pitch = math.atan2(-z, math.sqrt(x * x + y * y))
    yaw = -math.atan2(math.sin(roll) * z, math.cos(roll) * x - math.sin(roll) * y)
    return tuple(_wrap_degrees(angle) for angle in (roll, pitch, yaw))


def _wrap_degrees(radians):
    degrees = math.degrees(radians) % 360.0
    return 0.0 if degrees >= 360.0 else degrees + 0.0


def viewpoint_from_angles(index, theta, phi, r_sph):
    if theta == 0.0 or theta == math.pi:
        position = np.array([0.0, 0.0, r_sph if theta == 0.0 else -r_sph])
    else:
        position = r_sph * np.array([math.sin(theta) * math.cos(phi),
                                     math.sin(theta) * math.sin(phi),
                                     math.cos(theta)])
    return Viewpoint(index, theta, phi, position, euler_from_cartesian(position))


def generate_viewpoints(cfg: SphereConfig) -> List[Viewpoint]:
    """
    Viewpoints floor by floor (azimuths evenly spread per floor), poles last.
    Excluded indices are dropped; surviving viewpoints keep their index.
    """
    floors = latitude_floor_count(cfg.r_sph, cfg.r_circ)
    viewpoints = []
    for theta in floor_angles(floors):
        count = circles_per_floor(cfg.r_sph, cfg.r_circ, theta)
        for j in range(count):
            viewpoints.append(viewpoint_from_angles(len(viewpoints), theta, j * 2.0 * math.pi / count, cfg.r_sph))
    if cfg.include_poles:
        viewpoints.append(viewpoint_from_angles(len(viewpoints), 0.0, 0.0, cfg.r_sph))
        viewpoints.append(viewpoint_from_angles(len(viewpoints), math.pi, 0.0, cfg.r_sph))

    out_of_range = sorted(i for i in cfg.excluded_indices if not 0 <= i < len(viewpoints))
    if out_of_range:
        error_msg = f"Excluded viewpoint indices {out_of_range} outside generated range 0..{len(viewpoints) - 1}"
        logging.error(error_msg)
        raise ValueError(error_msg)

    kept = [vp for vp in viewpoints if vp.index not in cfg.excluded_indices]
    logging.info(f"Generated {len(viewpoints)} viewpoints on {floors} floors, {len(kept)} after exclusions")
    return kept


def camera_from_viewpoint(vp: Viewpoint, distance, image, vfov_deg, center=(0.0, 0.0, 0.0)) -> CameraView:
    """Camera at center + distance * viewpoint direction, looking at center."""
    if not distance > 0:
        error_msg = f"Camera distance must be positive, got {distance}"
        logging.error(error_msg)
        raise ValueError(error_msg)
    norm = np.linalg.norm(vp.position)
    if norm < 1e-12:
        error_msg = f"Viewpoint {vp.index} has a zero-length direction"
        logging.error(error_msg)
        raise ValueError(error_msg)
    center = np.asarray(center, dtype=np.float64)
    eye = center + distance * (vp.position / norm)
    width, height = image
    return CameraView.look_at(eye, center, width, height, vfov_deg, viewpoint=vp)


def plot_viewpoints(viewpoints, path, r_sph=DEFAULT_R_SPH):
    """Save a 3D scatter of the viewpoints with their indices, for authoring exclusion lists."""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig = plt.figure(figsize=(8, 8))
    ax = fig.add_subplot(projection='3d')
    positions = np.array([vp.position for vp in viewpoints]).reshape(-1, 3)
    ax.scatter(positions[:, 0], positions[:, 1], positions[:, 2], s=12)
    for vp in viewpoints:
        ax.text(*vp.position, str(vp.index), fontsize=6)
    ax.set_xlim(-r_sph, r_sph)
    ax.set_ylim(-r_sph, r_sph)
    ax.set_zlim(-r_sph, r_sph)
    ax.set_box_aspect((1, 1, 1))
    ax.set_title(f"{len(viewpoints)} viewpoints")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logging.info(f"Saved viewpoint plot to {path}")
