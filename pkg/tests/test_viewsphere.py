import math

import numpy as np
import pytest

from core.viewsphere import (CameraView, SphereConfig, camera_from_viewpoint, circles_per_floor,
                             euler_from_cartesian, floor_angles, generate_viewpoints, latitude_floor_count,
                             plot_viewpoints, viewpoint_from_angles)


def brute_force_floor_counts(r_sph, r_circ):
    floors = 0
    while (floors + 1) * 2.0 * np.arcsin(r_circ / r_sph) <= np.pi:
        floors += 1
    counts = []
    for i in range(floors):
        theta = (i + 0.5) * np.pi / floors
        n = 0
        while (n + 1) * 2.0 * r_circ <= 2.0 * np.pi * r_sph * np.sin(theta) + 1e-12:
            n += 1
        counts.append(n)
    return floors, counts


def test_default_sphere_counts():
    assert latitude_floor_count(0.8, 0.15) == 8
    floors, counts = brute_force_floor_counts(0.8, 0.15)
    assert floors == 8
    assert counts == [3, 9, 13, 16, 16, 13, 9, 3]
    assert [circles_per_floor(0.8, 0.15, t) for t in floor_angles(8)] == counts
    assert len(generate_viewpoints(SphereConfig())) == 84


@pytest.mark.parametrize('r_sph,r_circ', [(0.8, 0.15), (1.0, 0.1), (0.5, 0.2), (2.0, 0.35)])
def test_spacing_invariant(r_sph, r_circ):
    floors = latitude_floor_count(r_sph, r_circ)
    assert floors == brute_force_floor_counts(r_sph, r_circ)[0]
    for theta in floor_angles(floors):
        n = circles_per_floor(r_sph, r_circ, theta)
        if n > 0:
            assert r_sph * math.sin(theta) * (2.0 * math.pi / n) >= 2.0 * r_circ - 1e-12


def test_equal_radii_gives_one_floor():
    viewpoints = generate_viewpoints(SphereConfig(r_sph=1.0, r_circ=1.0, include_poles=False))
    assert latitude_floor_count(1.0, 1.0) == 1
    assert len(viewpoints) == circles_per_floor(1.0, 1.0, math.pi / 2)


def test_invalid_radii():
    with pytest.raises(ValueError):
        SphereConfig(r_sph=0.1, r_circ=0.2)
    with pytest.raises(ValueError):
        SphereConfig(r_circ=0.0)


def test_poles_come_last():
    viewpoints = generate_viewpoints(SphereConfig())
    assert viewpoints[-2].index == 82
    assert viewpoints[-2].position.tolist() == [0.0, 0.0, 0.8]
    assert viewpoints[-1].position.tolist() == [0.0, 0.0, -0.8]
    without = generate_viewpoints(SphereConfig(include_poles=False))
    assert len(without) == 82


def test_first_floor_layout():
    viewpoints = generate_viewpoints(SphereConfig())
    first = viewpoints[:3]
    assert [vp.theta for vp in first] == [math.pi / 16] * 3
    assert [vp.phi for vp in first] == [0.0, 2.0 * math.pi / 3, 4.0 * math.pi / 3]
    for vp in viewpoints:
        assert np.linalg.norm(vp.position) == pytest.approx(0.8)


def test_exclusion_keeps_indices():
    viewpoints = generate_viewpoints(SphereConfig(excluded_indices=frozenset({0, 5, 83})))
    assert len(viewpoints) == 81
    indices = [vp.index for vp in viewpoints]
    assert 0 not in indices and 5 not in indices and 83 not in indices
    assert indices[:5] == [1, 2, 3, 4, 6]


def test_exclusion_out_of_range():
    with pytest.raises(ValueError):
        generate_viewpoints(SphereConfig(excluded_indices=frozenset({84})))


def test_euler_angles():
    assert euler_from_cartesian((1.0, 0.0, 0.0)) == (0.0, 0.0, 0.0)
    roll, pitch, yaw = euler_from_cartesian((0.0, 1.0, 0.0))
    assert roll == pytest.approx(90.0)
    assert pitch == 0.0
    assert yaw == pytest.approx(180.0)
    _, pitch, _ = euler_from_cartesian((0.0, 0.0, 1.0))
    assert pitch == pytest.approx(270.0)
    for vp in generate_viewpoints(SphereConfig()):
        assert all(0.0 <= angle < 360.0 for angle in vp.euler_deg)
    with pytest.raises(ValueError):
        euler_from_cartesian((0.0, 0.0, 0.0))


def test_camera_looks_at_center():
    vp = viewpoint_from_angles(0, math.radians(60.0), math.radians(30.0), 0.8)
    center = np.array([0.01, -0.08, 0.1])
    camera = camera_from_viewpoint(vp, 0.5, (32, 24), 60.0, center)
    assert np.allclose(camera.position, center + 0.5 * vp.direction)
    assert np.allclose(camera.world_to_camera(center), [0.0, 0.0, 0.5])
    assert np.allclose(camera.rotation @ camera.rotation.T, np.eye(3))
    assert camera.fx == pytest.approx(12.0 / math.tan(math.radians(30.0)))
    assert (camera.cx, camera.cy) == (16.0, 12.0)


def test_camera_at_pole():
    vp = viewpoint_from_angles(0, 0.0, 0.0, 0.8)
    camera = camera_from_viewpoint(vp, 0.8, (16, 16), 60.0)
    assert np.all(np.isfinite(camera.rotation))
    assert np.allclose(camera.world_to_camera(np.zeros(3)), [0.0, 0.0, 0.8])


def test_camera_rejects_bad_distance():
    vp = viewpoint_from_angles(0, 1.0, 1.0, 0.8)
    with pytest.raises(ValueError):
        camera_from_viewpoint(vp, 0.0, (16, 16), 60.0)


def test_pixel_rays_pass_through_pixel_centers():
    camera = CameraView.look_at([0.3, -0.2, 0.5], [0.0, 0.0, 0.0], 8, 6, 50.0)
    rays = camera.pixel_rays()
    assert rays.shape == (48, 3)
    assert np.allclose(np.linalg.norm(rays, axis=1), 1.0)
    cam = rays @ camera.rotation.T
    u = camera.fx * cam[:, 0] / cam[:, 2] + camera.cx
    v = camera.fy * cam[:, 1] / cam[:, 2] + camera.cy
    assert np.allclose(u.reshape(6, 8), np.arange(8) + 0.5)
    assert np.allclose(v.reshape(6, 8), (np.arange(6) + 0.5)[:, None])


def test_plot_viewpoints(tmp_path):
    path = tmp_path / 'sphere.png'
    plot_viewpoints(generate_viewpoints(SphereConfig()), str(path))
    assert path.exists() and path.stat().st_size > 0
