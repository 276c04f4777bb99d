import math

import numpy as np
import pytest

from assets.geometry import (BPS_RADIUS_SCALE, BasisPointSet, bps_encode, hand_object_distances,
                             points_inside_mesh)
from assets.mesh import load_mesh


def brute_force_nearest(queries, cloud):
    out = []
    for q in queries:
        best = math.inf
        for c in cloud:
            dx, dy, dz = q[0] - c[0], q[1] - c[1], q[2] - c[2]
            best = min(best, dx * dx + dy * dy + dz * dz)
        out.append(math.sqrt(best))
    return np.array(out)


def test_bps_matches_oracle_small():
    rng = np.random.default_rng(3)
    cloud = rng.normal(size=(57, 3))
    basis = BasisPointSet.sample(33, radius=2.0, seed=11)
    assert np.array_equal(bps_encode(cloud, basis), brute_force_nearest(basis.basis_points, cloud))


def test_hand_object_distances_match_oracle_small():
    rng = np.random.default_rng(4)
    hand = rng.uniform(-0.1, 0.1, size=(300, 3))
    probe = rng.uniform(-0.05, 0.05, size=(41, 3))
    assert np.array_equal(hand_object_distances(hand, probe), brute_force_nearest(hand, probe))


@pytest.mark.slow
def test_oracles_at_1k_by_1k():
    rng = np.random.default_rng(5)
    cloud = rng.normal(size=(1000, 3))
    basis = BasisPointSet.sample(1000, radius=3.0, seed=6)
    hand = rng.normal(size=(1000, 3)) * 0.2
    assert np.array_equal(bps_encode(cloud, basis), brute_force_nearest(basis.basis_points, cloud))
    assert np.array_equal(hand_object_distances(hand, cloud), brute_force_nearest(hand, cloud))


def test_distance_to_self_is_zero():
    points = np.random.default_rng(8).normal(size=(20, 3))
    assert np.array_equal(hand_object_distances(points, points), np.zeros(20))


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        hand_object_distances(np.zeros((0, 3)), np.ones((4, 3)))
    with pytest.raises(ValueError):
        bps_encode(np.zeros((0, 3)), BasisPointSet.sample(4))


def test_basis_is_deterministic_per_seed():
    a = BasisPointSet.sample(64, radius=1.5, seed=1)
    b = BasisPointSet.sample(64, radius=1.5, seed=1)
    c = BasisPointSet.sample(64, radius=1.5, seed=2)
    assert np.array_equal(a.basis_points, b.basis_points)
    assert not np.array_equal(a.basis_points, c.basis_points)
    assert np.all(np.linalg.norm(a.basis_points, axis=1) <= 1.5)


def test_basis_for_mesh_covers_it(cube_obj):
    mesh = load_mesh(cube_obj)
    basis = BasisPointSet.for_mesh(mesh, count=256, seed=0)
    assert basis.count == 256
    center = np.array([0.5, 0.5, 0.5])
    limit = BPS_RADIUS_SCALE * math.sqrt(0.75)
    assert np.all(np.linalg.norm(basis.basis_points - center, axis=1) <= limit + 1e-12)


def test_points_inside_cube(cube_obj):
    mesh = load_mesh(cube_obj)
    points = np.array([[0.5, 0.5, 0.5], [0.25, 0.75, 0.1], [2.0, 2.0, 2.0], [-0.1, 0.5, 0.5], [0.5, 0.5, 1.5]])
    assert points_inside_mesh(points, mesh).tolist() == [True, True, False, False, False]
