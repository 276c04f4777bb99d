import os
import json
import filecmp
from dataclasses import replace

import numpy as np
import pytest

from core.evaluation import validate_dataset
from core.pipeline import (DatasetManifest, FrameGenerationError, benchmark, enumerate_frames, generate_dataset,
                           lighting_seed, load_assets, load_generation_config, parse_generation_config,
                           split_dataset)
from core.scene import AnnotationRecord, assemble_scene
from tests.conftest import REPO_ROOT, write_config
from utils.storage import DatasetStorage

FULL_CONFIG = os.path.join(REPO_ROOT, 'configs', 'full_scale.json')
TOY_CONFIG = os.path.join(REPO_ROOT, 'configs', 'toy.json')


def tree_files(root):
    files = []
    for directory, _, names in os.walk(root):
        for name in names:
            files.append(os.path.relpath(os.path.join(directory, name), root))
    return sorted(files)


def test_full_scale_combinatorics():
    cfg = load_generation_config(FULL_CONFIG)
    assert len(cfg.resolve_viewpoints()) == 90
    frames = enumerate_frames(cfg)
    assert len(frames) == 31680
    splits = split_dataset(frames, cfg.split)
    assert [len(splits[s]) for s in ('train', 'val', 'test')] == [20160, 5760, 5760]


def test_bundled_toy_config():
    cfg = load_generation_config(TOY_CONFIG)
    assert len(enumerate_frames(cfg)) == 16
    assert cfg.render_settings().width == 64


def test_enumeration_order(toy_config):
    cfg = load_generation_config(toy_config)
    frames = enumerate_frames(cfg)
    assert [f.frame_index for f in frames] == list(range(16))
    assert [f.grasp_id for f in frames[:8]] == ['grasp_00'] * 8
    assert [f.glove_index for f in frames[:4]] == [0, 1, 0, 1]
    assert [f.distance for f in frames[:4]] == [0.5, 0.5, 0.8, 0.8]
    assert [f.viewpoint_index for f in frames[:8]] == [0] * 4 + [1] * 4
    assert frames[5].lighting_seed == lighting_seed(7, 5)


def test_lighting_seed_depends_on_seed_and_index():
    assert lighting_seed(0, 3) == lighting_seed(0, 3)
    assert lighting_seed(0, 3) != lighting_seed(0, 4)
    assert lighting_seed(0, 3) != lighting_seed(1, 3)
    assert 0 <= lighting_seed(123, 456) < 2 ** 32


def test_global_seed_only_changes_lighting(toy_config):
    cfg = load_generation_config(toy_config)
    reseeded = replace(cfg, global_seed=cfg.global_seed + 1)
    frames, other = enumerate_frames(cfg), enumerate_frames(reseeded)
    assert len(frames) == len(other)
    assets = load_assets(cfg)
    lights_changed = False
    for a, b in zip(frames, other):
        assert (a.grasp_id, a.viewpoint_index, a.distance, a.glove_index) == \
               (b.grasp_id, b.viewpoint_index, b.distance, b.glove_index)
        scene_a, camera_a, record_a = assemble_scene(a, assets)
        scene_b, camera_b, record_b = assemble_scene(b, assets)
        for name in ('intrinsics', 'extrinsics', 'hand_joints_3d', 'hand_joints_2d', 'object_corners_3d',
                     'object_corners_2d'):
            assert np.array_equal(getattr(record_a, name), getattr(record_b, name)), name
        for obj_a, obj_b in zip(scene_a.objects, scene_b.objects):
            assert np.array_equal(obj_a.world_mesh().vertices, obj_b.world_mesh().vertices)
        lights_changed = lights_changed or record_a.lights != record_b.lights
    assert lights_changed


def test_sphere_center_shifts_the_camera(toy_config):
    cfg = load_generation_config(toy_config)
    offset = np.array([0.0, 0.02, 0.1])
    shifted = replace(cfg, sphere=replace(cfg.sphere, center=tuple(offset)))
    frame = enumerate_frames(cfg)[2]
    _, camera, record = assemble_scene(frame, load_assets(cfg))
    _, moved, moved_record = assemble_scene(frame, load_assets(shifted))
    assert np.allclose(moved.position - camera.position, offset)
    assert np.allclose(moved.rotation, camera.rotation)
    assert not np.allclose(moved_record.hand_joints_3d, record.hand_joints_3d)
    assert load_generation_config(toy_config).sphere.center == (0.0, 0.0, 0.0)


def test_split_requires_assignment(toy_config):
    cfg = load_generation_config(toy_config)
    with pytest.raises(ValueError):
        split_dataset(enumerate_frames(cfg), {'grasp_00': 'train'})
    with pytest.raises(ValueError):
        split_dataset(enumerate_frames(cfg), {'grasp_00': 'train', 'grasp_09': 'holdout'})


def test_split_follows_grasp(toy_config):
    cfg = load_generation_config(toy_config)
    splits = split_dataset(enumerate_frames(cfg), cfg.split)
    assert splits == {'train': list(range(8)), 'val': [], 'test': list(range(8, 16))}


def test_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_generation_config(str(tmp_path / 'missing.json'))
    bad = tmp_path / 'bad.json'
    bad.write_text('{"format_version": "graspsphere.config/0"}')
    with pytest.raises(ValueError):
        load_generation_config(str(bad))
    incomplete = tmp_path / 'incomplete.json'
    incomplete.write_text('{"format_version": "graspsphere.config/1", "split": {}}')
    with pytest.raises(ValueError):
        load_generation_config(str(incomplete))
    with pytest.raises(ValueError):
        parse_generation_config({'format_version': 'graspsphere.config/1', 'grasp_files': ['a.json'],
                                 'split': {'a': 'train'}, 'distances': [-0.5]}, str(tmp_path))


def test_render_overrides_and_unknown_keys(tmp_path):
    cfg = load_generation_config(write_config(tmp_path, size=24, shadows=True, not_a_setting=3))
    assert cfg.render['image_width'] == 24
    assert cfg.render['shadows'] is True
    assert 'not_a_setting' not in cfg.render


def test_split_must_cover_every_grasp(tmp_path):
    cfg = load_generation_config(write_config(tmp_path))
    cfg = replace(cfg, split={'grasp_00': 'train'})
    with pytest.raises(ValueError):
        load_assets(cfg)


def test_assembled_annotation_is_consistent(toy_config):
    cfg = load_generation_config(toy_config)
    assets = load_assets(cfg)
    frame = enumerate_frames(cfg)[3]
    scene, camera, record = assemble_scene(frame, assets)
    assert [obj.label for obj in scene.objects] == ['hand', 'arm', 'probe']
    assert 1 <= len(scene.lights) <= 3
    assert record.hand_joints_3d.shape == (21, 3)
    assert record.object_corners_3d.shape == (8, 3)
    assert record.behind_camera == []
    assert camera.distance == pytest.approx(0.8)
    again = AnnotationRecord.from_dict(json.loads(json.dumps(record.to_dict())))
    assert again.to_dict() == record.to_dict()


def test_generate_toy_dataset(toy_config, tmp_path):
    cfg = load_generation_config(toy_config)
    out = str(tmp_path / 'out')
    manifest = generate_dataset(cfg, jobs=1, output_dir=out, show_progress=False)
    assert manifest.frame_count == 16
    assert manifest.factor_counts == {'grasps': 2, 'viewpoints': 2, 'distances': 2, 'backgrounds': 1,
                                      'glove_colors': 2}
    assert [len(manifest.splits[s]) for s in ('train', 'val', 'test')] == [8, 0, 8]

    storage = DatasetStorage(out, create=False)
    assert storage.list_frames() == list(range(16))
    stored = DatasetManifest.from_dict(storage.get_manifest())
    assert stored.to_dict() == manifest.to_dict()
    for rel in manifest.frames[0]['files'].values():
        assert os.path.exists(os.path.join(out, rel))
    assert storage.get_image(0, 'rgb').shape == (32, 32, 3)
    assert storage.get_image(0, 'depth').dtype.name == 'uint16'

    report = validate_dataset(out, depth_sample=16)
    assert report.passed, [issue.to_dict() for issue in report.issues]

    # re-rendering one frame reproduces its files and leaves the manifest alone
    copy = str(tmp_path / 'frame_only')
    assert generate_dataset(cfg, jobs=1, output_dir=copy, frame_indices=[5], show_progress=False) is None
    assert not os.path.exists(os.path.join(copy, 'manifest.json'))
    frame_dir = os.path.join('frames', 'frame_000005')
    names = os.listdir(os.path.join(copy, frame_dir))
    match, mismatch, errors = filecmp.cmpfiles(os.path.join(out, frame_dir), os.path.join(copy, frame_dir),
                                               names, shallow=False)
    assert mismatch == [] and errors == [] and len(match) == 9


def test_frame_index_out_of_range(toy_config, tmp_path):
    cfg = load_generation_config(toy_config)
    with pytest.raises(ValueError):
        generate_dataset(cfg, output_dir=str(tmp_path / 'x'), frame_indices=[16], show_progress=False)


def test_missing_output_dir(toy_config):
    cfg = load_generation_config(toy_config)
    with pytest.raises(ValueError):
        generate_dataset(cfg, show_progress=False)


def test_failed_frame_reports_its_index(toy_config, tmp_path):
    cfg = load_generation_config(toy_config)
    cfg = replace(cfg, render=dict(cfg.render, ambient=1.5))
    with pytest.raises(FrameGenerationError) as excinfo:
        generate_dataset(cfg, output_dir=str(tmp_path / 'x'), frame_indices=[2], show_progress=False)
    assert excinfo.value.frame_index == 2


def test_benchmark(toy_config, tmp_path):
    cfg = load_generation_config(toy_config)
    count, elapsed, fps = benchmark(cfg, 2, str(tmp_path / 'scratch'))
    assert count == 2
    assert elapsed > 0 and fps > 0


@pytest.mark.slow
def test_worker_count_does_not_change_output(toy_config, tmp_path):
    cfg = load_generation_config(toy_config)
    one, eight = str(tmp_path / 'one'), str(tmp_path / 'eight')
    generate_dataset(cfg, jobs=1, output_dir=one, show_progress=False)
    generate_dataset(cfg, jobs=8, output_dir=eight, show_progress=False)
    files = tree_files(one)
    assert files == tree_files(eight)
    assert 'manifest.json' in files
    _, mismatch, errors = filecmp.cmpfiles(one, eight, files, shallow=False)
    assert mismatch == [] and errors == []


@pytest.mark.slow
def test_twenty_frames_at_full_size_are_consistent(tmp_path):
    viewpoints = ((30.0, 0.0), (60.0, 90.0), (90.0, 180.0), (120.0, 270.0), (150.0, 45.0))
    path = write_config(tmp_path, grasps=('grasp_03',), splits=('train',), size=256, viewpoints=viewpoints)
    out = str(tmp_path / 'out')
    manifest = generate_dataset(load_generation_config(path), jobs=1, output_dir=out, show_progress=False)
    assert manifest.frame_count == 20
    report = validate_dataset(out, depth_sample=20)
    assert report.passed, [issue.to_dict() for issue in report.issues]
