import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import cv2
import numpy as np

from assets.mesh import SEGMENTATION_IDS, TriMesh
from core.bvh import Bvh, build_bvh_from_triangles, intersect
from core.viewsphere import CameraView
from utils.config import DEFAULT_RENDER_SETTINGS

RGB_PASSES = ('rgb', 'rgb_no_hand', 'rgb_no_probe', 'rgb_gt_overlay')
DEPTH_PASSES = ('depth', 'depth_hand', 'depth_probe')
PASS_NAMES = RGB_PASSES[:3] + DEPTH_PASSES + ('segmentation', 'rgb_gt_overlay')

DEPTH_SENTINEL = 0.0
DEPTH_MAX_MM = 65535

HAND_KEYPOINT_COLOR = (0, 255, 0)
CORNER_KEYPOINT_COLOR = (255, 0, 0)

# Shadow rays start this far off the surface along the normal.
_SHADOW_BIAS = 1e-6


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SceneObject:
    mesh: TriMesh
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    color: Tuple[float, float, float] = (0.8, 0.8, 0.8)

    @property
    def label(self):
        return self.mesh.label

    def world_mesh(self):
        return self.mesh.transformed(self.rotation, self.translation)


@dataclass(frozen=True)
class Light:
    position: Tuple[float, float, float]
    intensity: float = 1.0
    color: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def to_dict(self):
        return {'position': list(self.position), 'intensity': self.intensity, 'color': list(self.color)}


@dataclass(frozen=True, eq=False)
class RenderScene:
    """
    Objects, point lights and a background (RGB triple or an HxWx3 float image in [0, 1]).

    A scene without objects renders as pure background.
    """
    objects: Tuple[SceneObject, ...] = ()
    lights: Tuple[Light, ...] = ()
    ambient: float = 0.25
    background: Union[Tuple[float, float, float], np.ndarray] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, 'objects', tuple(self.objects))
        object.__setattr__(self, 'lights', tuple(self.lights))
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError(f"Ambient term must be in [0, 1], got {self.ambient}")
        for light in self.lights:
            if light.intensity < 0:
                raise ValueError(f"Light intensity must be non-negative, got {light.intensity}")

    def object_ids(self, labels=None, exclude=None):
        ids = []
        for index, obj in enumerate(self.objects):
            if labels is not None and obj.label not in labels:
                continue
            if exclude is not None and obj.label in exclude:
                continue
            ids.append(index)
        return ids


@dataclass(frozen=True)
class RenderSettings:
    width: int = DEFAULT_RENDER_SETTINGS['image_width']
    height: int = DEFAULT_RENDER_SETTINGS['image_height']
    vfov_deg: float = DEFAULT_RENDER_SETTINGS['vfov_deg']
    shadows: bool = DEFAULT_RENDER_SETTINGS['shadows']
    aa_samples: int = DEFAULT_RENDER_SETTINGS['aa_samples']
    aa_seed: int = DEFAULT_RENDER_SETTINGS['aa_seed']
    use_bvh: bool = True

    @classmethod
    def from_settings(cls, settings):
        return cls(width=int(settings['image_width']), height=int(settings['image_height']),
                   vfov_deg=float(settings['vfov_deg']), shadows=bool(settings['shadows']),
                   aa_samples=max(1, int(settings['aa_samples'])), aa_seed=int(settings['aa_seed']))


@dataclass(frozen=True, eq=False)
class Hit:
    object_id: int
    triangle: int
    depth: float
    normal: np.ndarray
    position: np.ndarray


@dataclass(eq=False)
class FrameSet:
    """
    All passes of one frame. RGB passes are float [0, 1] HxWx3, depths are
    meters (0.0 = no hit), segmentation is uint8, the overlay is uint8 RGB.
    """
    rgb: np.ndarray
    depth: np.ndarray
    depth_hand: np.ndarray
    depth_probe: np.ndarray
    rgb_no_hand: np.ndarray
    rgb_no_probe: np.ndarray
    segmentation: np.ndarray
    rgb_gt_overlay: np.ndarray

    @property
    def size(self):
        return self.rgb.shape[1], self.rgb.shape[0]

    def quantized(self):
        """8-bit RGB, 16-bit millimeter depths and labels, keyed by pass name."""
        return {
            'rgb': quantize_rgb(self.rgb),
            'rgb_no_hand': quantize_rgb(self.rgb_no_hand),
            'rgb_no_probe': quantize_rgb(self.rgb_no_probe),
            'depth': quantize_depth(self.depth),
            'depth_hand': quantize_depth(self.depth_hand),
            'depth_probe': quantize_depth(self.depth_probe),
            'segmentation': self.segmentation.astype(np.uint8),
            'rgb_gt_overlay': self.rgb_gt_overlay,
        }


def quantize_rgb(image):
    """Clamp to [0, 1] then round half up to 8 bits."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def quantize_depth(depth):
    """Meters to millimeters, round half up; hits clamp to [1, 65535], misses stay 0."""
    millimeters = np.clip(np.floor(depth * 1000.0 + 0.5), 1, DEPTH_MAX_MM)
    return np.where(depth > DEPTH_SENTINEL, millimeters, 0).astype(np.uint16)


def project_point(camera: CameraView, p_world):
    """
    Pinhole projection of a world point. Returns (u, v, depth).

    Raises:
        BehindCameraError: when the point's camera-space z is not positive
    """
    x, y, z = camera.world_to_camera(np.asarray(p_world, dtype=np.float64))
    if not z > 0:
        raise BehindCameraError(f"Point {np.asarray(p_world).tolist()} is behind the camera (z_c={z})")
    return camera.fx * (x / z) + camera.cx, camera.fy * (y / z) + camera.cy, float(z)


def project_points(camera: CameraView, points_world):
    """Vectorized projection; returns (uv (N, 2), camera-space points (N, 3), in-front mask)."""
    cam = camera.world_to_camera(np.asarray(points_world, dtype=np.float64).reshape(-1, 3))
    in_front = cam[:, 2] > 0
    z = np.where(in_front, cam[:, 2], 1.0)
    uv = np.stack([camera.fx * (cam[:, 0] / z) + camera.cx, camera.fy * (cam[:, 1] / z) + camera.cy], axis=1)
    return uv, cam, in_front


def build_bvh(scene: RenderScene) -> Bvh:
    """BVH over every scene triangle in world space, tagged with (object id, triangle id)."""
    corners, object_ids, local_ids = [], [], []
    for index, obj in enumerate(scene.objects):
        mesh = obj.world_mesh()
        corners.append(mesh.vertices[mesh.triangles])
        object_ids.append(np.full(mesh.triangle_count, index, dtype=np.int64))
        local_ids.append(np.arange(mesh.triangle_count, dtype=np.int64))
    if not corners:
        error_msg = "Scene has no objects to build a BVH from"
        logging.error(error_msg)
        raise ValueError(error_msg)
    return build_bvh_from_triangles(np.concatenate(corners), np.concatenate(object_ids), np.concatenate(local_ids))


def trace_primary(bvh: Bvh, camera: CameraView, pixel) -> Optional[Hit]:
    """Nearest hit of the ray through the center of `pixel` = (x, y)."""
    x, y = pixel
    if not (0 <= x < camera.width and 0 <= y < camera.height):
        raise ValueError(f"Pixel {pixel} outside {camera.width}x{camera.height} image")
    direction = np.array([(x + 0.5 - camera.cx) / camera.fx, (y + 0.5 - camera.cy) / camera.fy, 1.0])
    direction = (direction / np.linalg.norm(direction)) @ camera.rotation
    origin = camera.position
    hit_t, hit_tri = intersect(bvh, origin[None, :], direction[None, :])
    triangle = int(hit_tri[0])
    if triangle < 0:
        return None
    normal = bvh.face_normals(np.array([triangle]))[0]
    if normal @ direction > 0:
        normal = -normal
    return Hit(int(bvh.object_ids[triangle]), int(bvh.local_ids[triangle]),
               float(hit_t[0] * (direction @ camera.rotation[2])), normal, origin + hit_t[0] * direction)


def _background_image(background, width, height):
    if isinstance(background, np.ndarray):
        image = background.astype(np.float64)
        if image.shape[:2] != (height, width):
            image = cv2.resize(image, (width, height), interpolation=cv2.INTER_LINEAR)
        return np.clip(image, 0.0, 1.0)
    return np.broadcast_to(np.asarray(background, dtype=np.float64), (height, width, 3)).copy()


class RenderHandler:
    """Deterministic CPU ray caster producing every pass of a frame."""

    def __init__(self, settings: Optional[RenderSettings] = None):
        self.settings = settings or RenderSettings()

    def _trace(self, bvh, origins, directions, enabled):
        if bvh is None or not np.any(enabled):
            count = len(directions)
            return np.full(count, np.inf), np.full(count, -1, dtype=np.int64)
        return intersect(bvh, origins, directions, enabled, use_bvh=self.settings.use_bvh)

    def _enabled(self, scene, bvh, object_ids):
        if bvh is None:
            return np.zeros(0, dtype=np.bool_)
        return np.isin(bvh.object_ids, np.asarray(object_ids, dtype=np.int64))

    def _shade(self, scene, bvh, origin, directions, hit_t, hit_tri, occluders, background):
        """Lambertian + ambient shading over `background` for one ray batch; `occluders` cast shadows."""
        rgb = background.reshape(-1, 3).copy()
        hits = hit_tri >= 0
        if not np.any(hits):
            return rgb
        triangles = hit_tri[hits]
        d = directions[hits]
        normals = bvh.face_normals(triangles)
        facing_away = np.einsum('ij,ij->i', normals, d) > 0
        normals[facing_away] *= -1.0
        points = origin + hit_t[hits, None] * d

        colors = np.array([scene.objects[i].color for i in range(len(scene.objects))], dtype=np.float64)
        base = colors[bvh.object_ids[triangles]]
        light_sum = np.full((len(triangles), 3), scene.ambient)
        for light in scene.lights:
            to_light = np.asarray(light.position, dtype=np.float64) - points
            light_distance = np.linalg.norm(to_light, axis=1)
            to_light /= light_distance[:, None]
            lambert = np.maximum(0.0, np.einsum('ij,ij->i', normals, to_light))
            if self.settings.shadows:
                shadow_t, shadow_tri = self._trace(bvh, points + normals * _SHADOW_BIAS, to_light, occluders)
                lambert = np.where((shadow_tri >= 0) & (shadow_t < light_distance), 0.0, lambert)
            light_sum += lambert[:, None] * light.intensity * np.asarray(light.color, dtype=np.float64)
        rgb[hits] = np.clip(base * light_sum, 0.0, 1.0)
        return rgb

    def _color_pass(self, scene, bvh, camera, object_ids, background, center_hits=None):
        enabled = self._enabled(scene, bvh, object_ids)
        # removed objects still cast shadows
        occluders = self._enabled(scene, bvh, scene.object_ids())
        origin = camera.position
        samples = self.settings.aa_samples
        if samples <= 1:
            directions = camera.pixel_rays()
            origins = np.broadcast_to(origin, directions.shape)
            hit_t, hit_tri = center_hits if center_hits is not None else self._trace(bvh, origins, directions, enabled)
            return self._shade(scene, bvh, origin, directions, hit_t, hit_tri, occluders, background)

        rng = np.random.default_rng(self.settings.aa_seed)
        accumulated = np.zeros((camera.width * camera.height, 3))
        for _ in range(samples):
            offsets = rng.random((camera.width * camera.height, 2)) - 0.5
            directions = camera.pixel_rays(offsets)
            origins = np.broadcast_to(origin, directions.shape)
            hit_t, hit_tri = self._trace(bvh, origins, directions, enabled)
            accumulated += self._shade(scene, bvh, origin, directions, hit_t, hit_tri, occluders, background)
        return accumulated / samples

    def _depth(self, camera, directions, hit_t):
        depth = np.where(np.isfinite(hit_t), hit_t * (directions @ camera.rotation[2]), DEPTH_SENTINEL)
        return depth.reshape(camera.height, camera.width)

    def render_frameset(self, scene: RenderScene, camera: CameraView, gt=None) -> FrameSet:
        """
        Render every pass. `gt` is anything with hand_joints_2d / object_corners_2d
        (pixel arrays); those points are drawn as 3x3 squares on the overlay.
        """
        width, height = camera.width, camera.height
        bvh = build_bvh(scene) if scene.objects else None
        background = _background_image(scene.background, width, height)

        directions = camera.pixel_rays()
        origins = np.broadcast_to(camera.position, directions.shape)

        all_ids = scene.object_ids()
        full_t, full_tri = self._trace(bvh, origins, directions, self._enabled(scene, bvh, all_ids))
        hand_t, _ = self._trace(bvh, origins, directions, self._enabled(scene, bvh, scene.object_ids(['hand'])))
        probe_t, _ = self._trace(bvh, origins, directions, self._enabled(scene, bvh, scene.object_ids(['probe'])))

        segmentation = np.zeros(width * height, dtype=np.uint8)
        if bvh is not None:
            labels = np.array([SEGMENTATION_IDS[obj.label] for obj in scene.objects], dtype=np.uint8)
            hits = full_tri >= 0
            segmentation[hits] = labels[bvh.object_ids[full_tri[hits]]]

        rgb = self._color_pass(scene, bvh, camera, all_ids, background, (full_t, full_tri))
        rgb_no_hand = self._color_pass(scene, bvh, camera, scene.object_ids(exclude=['hand']), background)
        rgb_no_probe = self._color_pass(scene, bvh, camera, scene.object_ids(exclude=['probe']), background)
        # removal only touches pixels whose center ray hits the removed object
        flat_rgb = rgb.reshape(-1, 3)
        rgb_no_hand = np.where(np.isfinite(hand_t)[:, None], rgb_no_hand, flat_rgb)
        rgb_no_probe = np.where(np.isfinite(probe_t)[:, None], rgb_no_probe, flat_rgb)
        rgb = rgb.reshape(height, width, 3)

        frames = FrameSet(
            rgb=rgb,
            depth=self._depth(camera, directions, full_t),
            depth_hand=self._depth(camera, directions, hand_t),
            depth_probe=self._depth(camera, directions, probe_t),
            rgb_no_hand=rgb_no_hand.reshape(height, width, 3),
            rgb_no_probe=rgb_no_probe.reshape(height, width, 3),
            segmentation=segmentation.reshape(height, width),
            rgb_gt_overlay=draw_keypoints(quantize_rgb(rgb), gt),
        )
        return frames


def draw_keypoints(image, gt):
    overlay = np.ascontiguousarray(image.copy())
    if gt is None:
        return overlay
    height, width = overlay.shape[:2]
    for points, color in ((getattr(gt, 'object_corners_2d', None), CORNER_KEYPOINT_COLOR),
                          (getattr(gt, 'hand_joints_2d', None), HAND_KEYPOINT_COLOR)):
        if points is None:
            continue
        for u, v in np.asarray(points, dtype=np.float64).reshape(-1, 2):
            if not (np.isfinite(u) and np.isfinite(v)):
                continue
            x, y = int(np.floor(u)), int(np.floor(v))
            if 0 <= x < width and 0 <= y < height:
                cv2.rectangle(overlay, (x - 1, y - 1), (x + 1, y + 1), color, thickness=-1)
    return overlay


def render_frameset(scene: RenderScene, camera: CameraView, settings: Optional[RenderSettings] = None, gt=None):
    return RenderHandler(settings).render_frameset(scene, camera, gt)
