import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from assets.grasp import GraspPose, ProbeModel, PROBE_COLOR, object_corner_keypoints
from assets.rig import HandRig, skin_hand
from core.renderer import Light, RenderScene, SceneObject, project_points
from core.viewsphere import CameraView, Viewpoint, camera_from_viewpoint

ANNOTATION_FORMAT_VERSION = 'graspsphere.annotation/1'

MIN_LIGHTS = 1
MAX_LIGHTS = 3
LIGHT_INTENSITY_RANGE = (0.5, 1.5)


@dataclass(eq=False)
class AnnotationRecord:
    """
    Ground truth of one frame. 3D keypoints are camera-space meters, 2D
    keypoints are pixels; the 2D values are the pinhole projection of the 3D ones.
    """
    frame_index: int
    intrinsics: np.ndarray
    extrinsics: np.ndarray
    image_size: Tuple[int, int]
    hand_joints_3d: np.ndarray
    hand_joints_2d: np.ndarray
    object_corners_3d: np.ndarray
    object_corners_2d: np.ndarray
    probe_rotation: np.ndarray
    probe_translation: np.ndarray
    z_offset: float
    grasp_id: str
    viewpoint_index: int
    viewpoint_euler_deg: Tuple[float, float, float]
    distance: float
    background_index: int
    glove_index: int
    lighting_seed: int
    lights: List[Dict] = field(default_factory=list)
    behind_camera: List[str] = field(default_factory=list)

    def to_dict(self):
        return {
            'format_version': ANNOTATION_FORMAT_VERSION,
            'frame_index': self.frame_index,
            'camera': {
                'intrinsics': np.asarray(self.intrinsics).tolist(),
                'extrinsics': np.asarray(self.extrinsics).tolist(),
                'image_size': list(self.image_size),
            },
            'hand_joints_3d': np.asarray(self.hand_joints_3d).tolist(),
            'hand_joints_2d': np.asarray(self.hand_joints_2d).tolist(),
            'object_corners_3d': np.asarray(self.object_corners_3d).tolist(),
            'object_corners_2d': np.asarray(self.object_corners_2d).tolist(),
            'probe_pose': {
                'rotation': np.asarray(self.probe_rotation).tolist(),
                'translation': np.asarray(self.probe_translation).tolist(),
                'z_offset': self.z_offset,
            },
            'grasp_id': self.grasp_id,
            'viewpoint': {'index': self.viewpoint_index, 'euler_deg': list(self.viewpoint_euler_deg)},
            'provenance': {
                'background_index': self.background_index,
                'glove_index': self.glove_index,
                'distance': self.distance,
                'lighting_seed': self.lighting_seed,
                'lights': self.lights,
            },
            'behind_camera': list(self.behind_camera),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get('format_version') != ANNOTATION_FORMAT_VERSION:
            raise ValueError(f"Annotation has format {data.get('format_version')!r}, "
                             f"expected {ANNOTATION_FORMAT_VERSION!r}")
        camera = data['camera']
        provenance = data['provenance']
        return cls(
            frame_index=int(data['frame_index']),
            intrinsics=np.asarray(camera['intrinsics'], dtype=np.float64),
            extrinsics=np.asarray(camera['extrinsics'], dtype=np.float64),
            image_size=tuple(camera['image_size']),
            hand_joints_3d=np.asarray(data['hand_joints_3d'], dtype=np.float64),
            hand_joints_2d=np.asarray(data['hand_joints_2d'], dtype=np.float64),
            object_corners_3d=np.asarray(data['object_corners_3d'], dtype=np.float64),
            object_corners_2d=np.asarray(data['object_corners_2d'], dtype=np.float64),
            probe_rotation=np.asarray(data['probe_pose']['rotation'], dtype=np.float64),
            probe_translation=np.asarray(data['probe_pose']['translation'], dtype=np.float64),
            z_offset=float(data['probe_pose']['z_offset']),
            grasp_id=data['grasp_id'],
            viewpoint_index=int(data['viewpoint']['index']),
            viewpoint_euler_deg=tuple(data['viewpoint']['euler_deg']),
            distance=float(provenance['distance']),
            background_index=int(provenance['background_index']),
            glove_index=int(provenance['glove_index']),
            lighting_seed=int(provenance['lighting_seed']),
            lights=list(provenance.get('lights', [])),
            behind_camera=list(data.get('behind_camera', [])),
        )


def reproject(intrinsics, points_3d):
    """Pinhole projection of camera-space points with a 3x3 intrinsics matrix."""
    points_3d = np.asarray(points_3d, dtype=np.float64).reshape(-1, 3)
    k = np.asarray(intrinsics, dtype=np.float64)
    z = points_3d[:, 2]
    return np.stack([k[0, 0] * (points_3d[:, 0] / z) + k[0, 2],
                     k[1, 1] * (points_3d[:, 1] / z) + k[1, 2]], axis=1)


def sample_lights(lighting_seed, camera: CameraView, target) -> Tuple[Light, ...]:
    """
    1-3 white point lights on the camera-side hemisphere around `target`,
    intensities in [0.5, 1.5], all drawn from `lighting_seed`.
    """
    rng = np.random.default_rng(lighting_seed)
    target = np.asarray(target, dtype=np.float64)
    toward_camera = camera.position - target
    reach = np.linalg.norm(toward_camera)
    toward_camera /= reach
    lights = []
    for _ in range(int(rng.integers(MIN_LIGHTS, MAX_LIGHTS + 1))):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        if direction @ toward_camera < 0:
            direction = -direction
        radius = reach * rng.uniform(1.0, 2.0)
        intensity = float(rng.uniform(*LIGHT_INTENSITY_RANGE))
        lights.append(Light(tuple((target + radius * direction).tolist()), intensity))
    return tuple(lights)


@dataclass(frozen=True, eq=False)
class SceneAssets:
    """Everything a frame needs besides its FrameSpec; shared read-only by workers."""
    rig: HandRig
    probe: ProbeModel
    grasps: Dict[str, GraspPose]
    viewpoints: Dict[int, Viewpoint]
    backgrounds: Tuple
    glove_colors: Tuple[Tuple[float, float, float], ...]
    arm_color: Tuple[float, float, float]
    image_size: Tuple[int, int]
    vfov_deg: float
    ambient: float
    # sphere center relative to the hand centroid
    sphere_center: Tuple[float, float, float] = (0.0, 0.0, 0.0)


def assemble_scene(spec, assets: SceneAssets):
    """
    Build the render scene, camera and annotation of one frame spec.

    The probe sits at the origin (z-offset corrected), the hand is posed by
    skinning and the camera looks at the hand centroid shifted by the
    sphere center.
    """
    if spec.grasp_id not in assets.grasps:
        error_msg = f"Frame {spec.frame_index} references unknown grasp '{spec.grasp_id}'"
        logging.error(error_msg)
        raise KeyError(error_msg)
    pose = assets.grasps[spec.grasp_id]
    posed, joints_world = skin_hand(assets.rig, pose)
    parts = posed.split_by_label()
    hand = parts.get('hand', posed)
    target = hand.centroid() + np.asarray(assets.sphere_center, dtype=np.float64)

    rotation, translation = assets.probe.pose(pose)
    glove = assets.glove_colors[spec.glove_index]
    objects = [SceneObject(hand, color=glove)]
    if 'arm' in parts:
        objects.append(SceneObject(parts['arm'], color=assets.arm_color))
    objects.append(SceneObject(assets.probe.mesh, rotation, translation, PROBE_COLOR))

    viewpoint = assets.viewpoints[spec.viewpoint_index]
    camera = camera_from_viewpoint(viewpoint, spec.distance, assets.image_size, assets.vfov_deg, target)
    lights = sample_lights(spec.lighting_seed, camera, target)
    scene = RenderScene(tuple(objects), lights, assets.ambient, assets.backgrounds[spec.background_index])

    corners_world = object_corner_keypoints(assets.probe, rotation, translation)
    _, joints_cam, joints_front = project_points(camera, joints_world)
    _, corners_cam, corners_front = project_points(camera, corners_world)
    behind = [f"hand_{i}" for i in np.flatnonzero(~joints_front)] + \
             [f"corner_{i}" for i in np.flatnonzero(~corners_front)]
    if behind:
        logging.warning(f"Frame {spec.frame_index}: keypoints behind the camera: {', '.join(behind)}")

    record = AnnotationRecord(
        frame_index=spec.frame_index,
        intrinsics=camera.intrinsics,
        extrinsics=camera.extrinsics,
        image_size=(camera.width, camera.height),
        hand_joints_3d=joints_cam,
        hand_joints_2d=reproject(camera.intrinsics, joints_cam),
        object_corners_3d=corners_cam,
        object_corners_2d=reproject(camera.intrinsics, corners_cam),
        probe_rotation=rotation,
        probe_translation=translation,
        z_offset=assets.probe.z_offset,
        grasp_id=pose.grasp_id,
        viewpoint_index=viewpoint.index,
        viewpoint_euler_deg=viewpoint.euler_deg,
        distance=float(spec.distance),
        background_index=spec.background_index,
        glove_index=spec.glove_index,
        lighting_seed=int(spec.lighting_seed),
        lights=[light.to_dict() for light in lights],
        behind_camera=behind,
    )
    return scene, camera, record
