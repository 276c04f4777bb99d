import numpy as np
import pytest

from assets.mesh import (EmptyMeshError, MeshIndexError, MeshParseError, TriMesh, load_mesh, save_obj)


def test_load_cube(cube_obj):
    mesh = load_mesh(cube_obj, 'probe')
    assert mesh.vertex_count == 8
    assert mesh.triangle_count == 12
    assert mesh.label == 'probe'
    assert mesh.vertices[1].tolist() == [1.0, 0.0, 0.0]
    assert mesh.triangles[0].tolist() == [0, 2, 1]
    assert mesh.is_watertight()


def test_save_and_reload_keeps_vertex_order(cube_obj, tmp_path):
    mesh = load_mesh(cube_obj)
    shifted = mesh.with_vertices(mesh.vertices + np.array([0.1, -0.25, 1e-7]))
    out = str(tmp_path / 'shifted.obj')
    save_obj(shifted, out)
    again = load_mesh(out)
    assert np.array_equal(again.vertices, shifted.vertices)
    assert np.array_equal(again.triangles, shifted.triangles)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mesh(str(tmp_path / 'nope.obj'))


def test_unsupported_extension(tmp_path):
    path = tmp_path / 'mesh.ply'
    path.write_text('ply\n')
    with pytest.raises(MeshParseError):
        load_mesh(str(path))


def test_empty_file(tmp_path):
    path = tmp_path / 'empty.obj'
    path.write_text('# nothing here\n')
    with pytest.raises(EmptyMeshError):
        load_mesh(str(path))


def test_out_of_range_face(tmp_path):
    path = tmp_path / 'bad.obj'
    path.write_text('v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n')
    with pytest.raises(MeshIndexError):
        load_mesh(str(path))


def test_zero_face_index(tmp_path):
    path = tmp_path / 'zero.obj'
    path.write_text('v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n')
    with pytest.raises(MeshIndexError):
        load_mesh(str(path))


def test_quad_faces_rejected(tmp_path):
    path = tmp_path / 'quad.obj'
    path.write_text('v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n')
    with pytest.raises(MeshParseError):
        load_mesh(str(path))


def test_negative_indices_and_slashes(tmp_path):
    path = tmp_path / 'rel.obj'
    path.write_text('v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3//1 -2//1 -1//1\n')
    mesh = load_mesh(str(path))
    assert mesh.triangles.tolist() == [[0, 1, 2]]


def test_degenerate_triangle_rejected():
    with pytest.raises(MeshIndexError):
        TriMesh(np.eye(3), [[0, 1, 1]])


def test_arrays_are_read_only(cube_obj):
    mesh = load_mesh(cube_obj)
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 5.0


def test_transformed_and_submesh():
    vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5], [6, 5, 5], [5, 6, 5]], dtype=float)
    mesh = TriMesh(vertices, [[0, 1, 2], [3, 4, 5]], 'hand', np.array(['hand', 'arm']))
    moved = mesh.transformed(np.eye(3), [0.0, 0.0, 2.0])
    assert moved.vertices[:, 2].tolist() == [2.0, 2.0, 2.0, 7.0, 7.0, 7.0]

    parts = mesh.split_by_label()
    assert sorted(parts) == ['arm', 'hand']
    assert parts['arm'].vertex_count == 3
    assert parts['arm'].vertices[0].tolist() == [5.0, 5.0, 5.0]
    assert mesh.submesh('probe') is None


def test_open_mesh_is_not_watertight():
    mesh = TriMesh(np.eye(3), [[0, 1, 2]])
    assert not mesh.is_watertight()
