import json

import numpy as np
import pytest
from scipy.io import savemat

from assets.grasp import (DEFAULT_Z_OFFSET, GraspFileError, GraspPose, ProbeModel, TextureSpec, apply_z_offset,
                          build_probe_mesh, convert_grasp_file, estimate_z_offset, load_grasp_pose,
                          object_corner_keypoints, validate_grasp)
from assets.mesh import TriMesh, load_mesh
from assets.rig import build_capsule_rig
from tests.conftest import flat_pose, grasp_path


def test_bundled_grasps_load():
    for k in range(11):
        pose = load_grasp_pose(grasp_path(f"grasp_{k:02d}"))
        assert pose.grasp_id == f"grasp_{k:02d}"
        assert pose.joint_rotations.shape == (21, 3)
        assert np.all((pose.probe_euler_deg >= 0) & (pose.probe_euler_deg < 360))


def test_missing_grasp_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_grasp_pose(str(tmp_path / 'absent.json'))


def test_wrong_format_version(tmp_path):
    path = tmp_path / 'g.json'
    data = flat_pose('g').to_dict()
    data['format_version'] = 'graspsphere.grasp/0'
    path.write_text(json.dumps(data))
    with pytest.raises(GraspFileError):
        load_grasp_pose(str(path))


def test_missing_field(tmp_path):
    path = tmp_path / 'g.json'
    data = flat_pose('g').to_dict()
    del data['joint_rotations']
    path.write_text(json.dumps(data))
    with pytest.raises(GraspFileError):
        load_grasp_pose(str(path))


def test_unsupported_extension(tmp_path):
    path = tmp_path / 'g.txt'
    path.write_text('grasp')
    with pytest.raises(GraspFileError):
        load_grasp_pose(str(path))


def test_euler_range_is_half_open():
    with pytest.raises(ValueError):
        flat_pose(euler=(0.0, 360.0, 0.0))
    with pytest.raises(ValueError):
        flat_pose(euler=(-1.0, 0.0, 0.0))
    assert flat_pose(euler=(359.5, 0.0, 0.0)).probe_euler_deg[0] == 359.5


def test_mat_file_conversion(tmp_path):
    rotations = np.arange(63, dtype=np.float64).reshape(21, 3) * 0.01
    mat_path = str(tmp_path / 'grasp_x.mat')
    savemat(mat_path, {'grasp_id': 'grasp_x', 'hand_translation': np.array([0.01, 0.02, 0.03]),
                       'joint_rotations': rotations, 'probe_euler_deg': np.array([10.0, 20.0, 30.0])})
    json_path = str(tmp_path / 'grasp_x.json')
    pose = convert_grasp_file(mat_path, json_path)
    assert pose.grasp_id == 'grasp_x'
    assert np.array_equal(pose.joint_rotations, rotations)

    again = load_grasp_pose(json_path)
    assert again.grasp_id == 'grasp_x'
    assert np.array_equal(again.joint_rotations, rotations)
    assert again.probe_euler_deg.tolist() == [10.0, 20.0, 30.0]


def test_apply_z_offset_direction_and_inverse():
    assert apply_z_offset(np.zeros(3), 0.5).tolist() == [0.0, 0.0, -0.5]
    t = np.array([0.25, -0.125, 0.75])
    assert np.array_equal(apply_z_offset(apply_z_offset(t, 0.0625), -0.0625), t)
    assert np.array_equal(apply_z_offset(t, 0.0), t)


def test_probe_pose_uses_z_offset():
    probe = ProbeModel(build_probe_mesh())
    rotation, translation = probe.pose(flat_pose(euler=(0.0, 0.0, 90.0)))
    assert translation.tolist() == [0.0, 0.0, -DEFAULT_Z_OFFSET]
    assert np.allclose(rotation @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])


def test_corner_order(cube_obj):
    probe = ProbeModel(load_mesh(cube_obj, 'probe'))
    corners = object_corner_keypoints(probe, np.eye(3), np.zeros(3))
    assert corners.shape == (8, 3)
    assert corners[0].tolist() == [0.0, 0.0, 0.0]
    assert corners[1].tolist() == [0.0, 0.0, 1.0]
    assert corners[2].tolist() == [0.0, 1.0, 0.0]
    assert corners[4].tolist() == [1.0, 0.0, 0.0]
    assert corners[7].tolist() == [1.0, 1.0, 1.0]

    moved = object_corner_keypoints(probe, np.eye(3), np.array([0.0, 0.0, -2.0]))
    assert moved[7].tolist() == [1.0, 1.0, -1.0]


def test_quarter_turn_keeps_centered_cube_corners(cube_obj):
    probe = ProbeModel(load_mesh(cube_obj, 'probe').transformed(np.eye(3), [-0.5, -0.5, -0.5]))
    original = object_corner_keypoints(probe, np.eye(3), np.zeros(3))
    quarter = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    rotated = object_corner_keypoints(probe, quarter, np.zeros(3))
    assert not np.allclose(rotated, original)
    assert sorted(map(tuple, np.round(rotated, 12))) == sorted(map(tuple, np.round(original, 12)))


def test_corner_box_must_be_ordered(cube_obj):
    with pytest.raises(ValueError):
        ProbeModel(load_mesh(cube_obj, 'probe'), corner_source=(np.ones(3), np.zeros(3)))


def test_estimate_z_offset(cube_obj):
    render_frame = load_mesh(cube_obj, 'probe')
    grasp_frame = render_frame.transformed(np.eye(3), [0.0, 0.0, -0.25])
    dz = estimate_z_offset(grasp_frame, render_frame)
    assert dz == pytest.approx(0.25)
    assert np.allclose(apply_z_offset(render_frame.centroid(), dz), grasp_frame.centroid())


def test_probe_mesh():
    mesh = build_probe_mesh()
    assert mesh.label == 'probe'
    assert mesh.is_watertight()
    lo, hi = mesh.bounds()
    assert lo[2] == 0.0
    assert hi[2] == pytest.approx(0.155)


def test_texture_spec_validation():
    assert TextureSpec().glove_rgb == (0.5647058824, 0.5921568627, 0.768627451)
    with pytest.raises(ValueError):
        TextureSpec(glove_rgb=(1.2, 0.0, 0.0))


def test_validate_grasp_far_apart():
    report = validate_grasp(build_capsule_rig(), flat_pose(translation=(1.0, 1.0, 1.0)),
                            ProbeModel(build_probe_mesh()))
    assert report.contact_count == 0
    assert report.penetration is False
    assert report.min_distance > 0.5


def test_validate_grasp_detects_penetration():
    # index finger base placed on the probe axis
    report = validate_grasp(build_capsule_rig(), flat_pose(translation=(0.03, -0.09, 0.0)),
                            ProbeModel(build_probe_mesh()))
    assert report.penetration is True


def test_validate_grasp_open_probe():
    open_probe = ProbeModel(TriMesh(np.eye(3) * 0.01, [[0, 1, 2]], 'probe'))
    report = validate_grasp(build_capsule_rig(), flat_pose(translation=(1.0, 1.0, 1.0)), open_probe)
    assert report.penetration is None


def test_validate_grasp_threshold():
    with pytest.raises(ValueError):
        validate_grasp(build_capsule_rig(), flat_pose(), ProbeModel(build_probe_mesh()), contact_threshold=0.0)


def test_grasp_pose_rejects_nan():
    with pytest.raises(ValueError):
        GraspPose('bad', [np.nan, 0.0, 0.0], np.zeros((21, 3)), [0.0, 0.0, 0.0])
