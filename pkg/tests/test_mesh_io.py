import numpy as np
import pytest
import trimesh
from numpy.testing import assert_allclose, assert_array_equal

from src.errors import MeshIOError, ParseError
from src.geometry import TriangleMesh
from src.mesh_io import detect_format, mesh_read, mesh_write


@pytest.fixture
def box():
    mesh = trimesh.creation.box(extents=(0.4, 0.3, 0.2))
    return TriangleMesh(mesh.vertices.astype(np.float32), mesh.faces)


@pytest.mark.parametrize("name,binary", [("mesh.obj", True), ("mesh.ply", True), ("mesh.ply", False)])
def test_write_then_read_preserves_mesh(tmp_path, box, name, binary):
    path = tmp_path / name
    mesh_write(str(path), box, binary=binary)
    again = mesh_read(str(path))
    assert_allclose(again.vertices, box.vertices, atol=1e-7)
    assert_array_equal(again.triangles, box.triangles)


def test_binary_ply_header(tmp_path, box):
    path = tmp_path / "mesh.ply"
    mesh_write(str(path), box)
    data = path.read_bytes()
    assert data.startswith(b"ply\nformat binary_little_endian 1.0\n")
    assert b"property list uchar int vertex_indices" in data


def test_obj_polygons_are_fan_triangulated(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n")
    mesh = mesh_read(str(path))
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_negative_indices(tmp_path):
    path = tmp_path / "tri.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
    assert mesh_read(str(path)).triangles.tolist() == [[0, 1, 2]]


def test_obj_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(ParseError) as info:
        mesh_read(str(path))
    assert info.value.line == 4
    assert "line 4" in str(info.value)


def test_obj_bad_coordinate(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 zero 0\n")
    with pytest.raises(ParseError) as info:
        mesh_read(str(path))
    assert info.value.line == 1


def test_ascii_ply_with_quad_face(tmp_path):
    path = tmp_path / "quad.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n"
        "property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
    )
    mesh = mesh_read(str(path))
    assert len(mesh.vertices) == 4
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_truncated_binary_ply(tmp_path, box):
    path = tmp_path / "mesh.ply"
    mesh_write(str(path), box)
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(ParseError):
        mesh_read(str(path))


def test_not_a_ply(tmp_path):
    path = tmp_path / "fake.ply"
    path.write_bytes(b"solid nothing\n")
    with pytest.raises(ParseError):
        mesh_read(str(path))


def test_unsupported_format_and_missing_file(tmp_path):
    with pytest.raises(MeshIOError):
        detect_format("mesh.stl")
    assert detect_format("mesh.bin", "PLY") == "ply"
    with pytest.raises(MeshIOError):
        mesh_read(str(tmp_path / "missing.obj"))
