import numpy as np
import pytest
import trimesh
from numpy.testing import assert_allclose

from src.errors import EmptyMeshError, OpenMeshError
from src.geometry import (
    AnalyticPrimitive,
    MeshQuery,
    TriangleMesh,
    mesh_field,
    normalize_to_unit_cube,
    normalize_vectors,
    primitive_field,
    random_rotation,
    rotation_about_z,
)


def icosphere(radius=0.3, subdivisions=3):
    mesh = trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius)
    return TriangleMesh(mesh.vertices, mesh.faces)


def unit_box():
    mesh = trimesh.creation.box(extents=(0.5, 0.5, 0.5))
    return TriangleMesh(mesh.vertices, mesh.faces)


def test_triangle_indices_are_validated():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])


def test_empty_mesh_properties():
    mesh = TriangleMesh.empty()
    assert mesh.is_empty
    assert not mesh.is_closed()
    assert mesh.volume() == 0.0
    with pytest.raises(EmptyMeshError):
        mesh.sample_surface(10, seed=0)


def test_box_mesh_is_closed_with_expected_volume():
    box = unit_box()
    assert box.is_closed()
    assert box.volume() == pytest.approx(0.125)


def test_cleaned_drops_degenerate_triangles():
    vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 2, 2]], dtype=float)
    mesh = TriangleMesh(vertices, [[0, 1, 2], [0, 0, 1], [0, 1, 1]])
    cleaned = mesh.cleaned()
    assert len(cleaned.triangles) == 1
    assert len(cleaned.vertices) == 3


def test_submesh_keeps_selected_faces():
    box = unit_box()
    mask = np.zeros(len(box.triangles), dtype=bool)
    mask[:2] = True
    sub = box.submesh(mask)
    assert len(sub.triangles) == 2
    assert not sub.is_closed()


def test_sample_surface_is_deterministic():
    sphere = icosphere()
    a, na = sphere.sample_surface(500, seed=4)
    b, nb = sphere.sample_surface(500, seed=4)
    assert_allclose(a, b)
    assert_allclose(nb, na)
    assert_allclose(np.linalg.norm(na, axis=1), 1.0)


def test_rotations_are_orthonormal(rng):
    rotation = random_rotation(rng)
    assert_allclose(rotation @ rotation.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(rotation) == pytest.approx(1.0)
    assert_allclose(rotation_about_z(1) @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)


def test_normalize_vectors_uses_fallback_for_zero_rows():
    out = normalize_vectors(np.array([[3.0, 0.0, 4.0], [0.0, 0.0, 0.0]]))
    assert_allclose(out, [[0.6, 0.0, 0.8], [0.0, 0.0, 1.0]])


def test_primitive_parameters_must_be_positive():
    with pytest.raises(ValueError):
        AnalyticPrimitive("sphere", {"radius": 0.0})
    with pytest.raises(ValueError):
        AnalyticPrimitive("box", {"hx": 0.1, "hy": 0.1})
    with pytest.raises(ValueError):
        AnalyticPrimitive("cone", {})


def test_sphere_field_values():
    sphere = AnalyticPrimitive("sphere", {"radius": 0.3})
    occ, sdf, nf = primitive_field(sphere, [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.3, 0.0]])
    assert_allclose(sdf, [-0.3, 0.2, 0.0], atol=1e-12)
    assert_allclose(occ, [1.0, 0.0, 0.0])
    assert_allclose(nf[1:], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], atol=1e-12)


def test_box_field_matches_analytic_distance():
    box = AnalyticPrimitive("box", {"hx": 0.2, "hy": 0.1, "hz": 0.3})
    _, sdf, nf = primitive_field(box, [[0.5, 0.0, 0.0], [0.0, 0.0, 0.0], [0.3, 0.2, 0.0]])
    assert_allclose(sdf, [0.3, -0.1, np.hypot(0.1, 0.1)], atol=1e-12)
    assert_allclose(nf[0], [1.0, 0.0, 0.0])
    assert_allclose(nf[1], [0.0, 1.0, 0.0])


def test_posed_half_space():
    prim = AnalyticPrimitive("half-space", {}, rotation=np.diag([1.0, -1.0, -1.0]),
                             translation=[0.0, 0.0, 0.2])
    occ, sdf, nf = primitive_field(prim, [[0.0, 0.0, 0.5], [0.0, 0.0, 0.0]])
    assert_allclose(occ, [1.0, 0.0])
    assert_allclose(sdf, [-0.3, 0.2], atol=1e-12)
    assert_allclose(nf, [[0.0, 0.0, -1.0], [0.0, 0.0, -1.0]], atol=1e-12)


def test_torus_and_cylinder_signs():
    torus = AnalyticPrimitive("torus", {"major_radius": 0.3, "minor_radius": 0.05})
    cylinder = AnalyticPrimitive("cylinder", {"radius": 0.2, "half_height": 0.1})
    assert primitive_field(torus, [[0.3, 0.0, 0.0]])[1][0] == pytest.approx(-0.05)
    assert primitive_field(torus, [[0.0, 0.0, 0.0]])[1][0] == pytest.approx(0.25)
    assert primitive_field(cylinder, [[0.0, 0.0, 0.0]])[1][0] == pytest.approx(-0.1)
    assert primitive_field(cylinder, [[0.0, 0.0, 0.3]])[1][0] == pytest.approx(0.2)


def test_superellipsoid_zero_set():
    prim = AnalyticPrimitive("superellipsoid", {"ax": 0.3, "ay": 0.2, "az": 0.25, "e1": 1.0, "e2": 1.0})
    _, sdf, nf = primitive_field(prim, [[0.3, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.4]])
    assert abs(sdf[0]) < 1e-9
    assert sdf[1] < 0 < sdf[2]
    assert_allclose(nf[0], [1.0, 0.0, 0.0], atol=1e-6)


def test_primitive_round_trips_through_dict(rng):
    prim = AnalyticPrimitive("box", {"hx": 0.1, "hy": 0.2, "hz": 0.3},
                             rotation=random_rotation(rng), translation=[0.1, 0.0, -0.1])
    again = AnalyticPrimitive.from_dict(prim.to_dict())
    assert again.params == prim.params
    assert_allclose(again.rotation, prim.rotation)


def ray_parity_inside(mesh, points, direction=(0.5773, 0.5774, 0.5775)):
    """Inside test by counting ray/triangle crossings (Moller-Trumbore)."""
    d = np.asarray(direction) / np.linalg.norm(direction)
    a, b, c = mesh.corners()
    e1, e2 = b - a, c - a
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    inv = 1.0 / np.where(np.abs(det) > 1e-15, det, np.inf)
    inside = []
    for p in points:
        s = p - a
        u = np.einsum("ij,ij->i", s, h) * inv
        q = np.cross(s, e1)
        v = (q @ d) * inv
        t = np.einsum("ij,ij->i", e2, q) * inv
        hits = (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        inside.append(hits.sum() % 2 == 1)
    return np.array(inside)


def test_primitive_fields_are_one_lipschitz(rng):
    prims = [
        AnalyticPrimitive("sphere", {"radius": 0.3}, translation=[0.05, 0.0, -0.1]),
        AnalyticPrimitive("box", {"hx": 0.2, "hy": 0.1, "hz": 0.3}, rotation=random_rotation(rng)),
        AnalyticPrimitive("cylinder", {"radius": 0.2, "half_height": 0.15}, rotation=random_rotation(rng)),
        AnalyticPrimitive("torus", {"major_radius": 0.3, "minor_radius": 0.08}),
        AnalyticPrimitive("half-space", {}, rotation=random_rotation(rng), translation=[0.0, 0.1, 0.0]),
    ]
    p = rng.uniform(-0.6, 0.6, size=(2000, 3))
    q = rng.uniform(-0.6, 0.6, size=(2000, 3))
    gap = np.linalg.norm(p - q, axis=1)
    for prim in prims:
        diff = np.abs(primitive_field(prim, p)[1] - primitive_field(prim, q)[1])
        assert np.all(diff <= gap + 1e-9), prim.kind


def test_mesh_field_matches_sphere_sdf(rng):
    mesh = icosphere(radius=0.3, subdivisions=4)
    points = rng.uniform(-0.5, 0.5, size=(300, 3))
    occ, sdf, nf = mesh_field(mesh, points)
    exact = np.linalg.norm(points, axis=1) - 0.3
    assert np.max(np.abs(sdf - exact)) < 5e-3
    far = np.abs(exact) > 0.01
    assert_allclose(occ[far], (exact[far] < 0).astype(float))
    outside = exact > 0.05
    radial = points[outside] / np.linalg.norm(points[outside], axis=1, keepdims=True)
    assert np.min(np.einsum("ij,ij->i", nf[outside], radial)) > 0.95




def test_mesh_field_inside_matches_ray_parity(rng):
    mesh = unit_box().transformed(rotation=random_rotation(rng))
    points = rng.uniform(-0.45, 0.45, size=(400, 3))
    occ, sdf, _ = mesh_field(mesh, points)
    clear = np.abs(sdf) > 1e-3
    assert clear.sum() > 300
    assert np.array_equal(occ[clear] == 1.0, ray_parity_inside(mesh, points[clear]))


def test_mesh_query_nearest_points():
    query = MeshQuery(unit_box())
    closest, dist, _ = query.nearest([[0.0, 0.0, 0.5], [0.0, 0.0, 0.0]])
    assert_allclose(closest[0], [0.0, 0.0, 0.25], atol=1e-12)
    assert_allclose(dist, [0.25, 0.25], atol=1e-12)
    assert query.contains([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]).tolist() == [True, False]
    occ, sdf, nf = query.evaluate([[0.0, 0.0, 0.5], [0.0, 0.0, 0.2]])
    assert_allclose(sdf, [0.25, -0.05], atol=1e-12)
    assert_allclose(occ, [0.0, 1.0])
    assert_allclose(nf, [[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]], atol=1e-12)


def test_surface_distance():
    box = unit_box()
    assert_allclose(box.surface_distance([[0.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.25, 0.1, 0.1]]),
                    [0.25, 0.25, 0.0], atol=1e-12)
    with pytest.raises(EmptyMeshError):
        TriangleMesh.empty().surface_distance([[0.0, 0.0, 0.0]])


def test_open_mesh_is_rejected():
    box = unit_box()
    with pytest.raises(OpenMeshError):
        MeshQuery(box.submesh(np.arange(len(box.triangles)) > 0))
    with pytest.raises(EmptyMeshError):
        MeshQuery(TriangleMesh.empty())


def test_normalize_to_unit_cube():
    mesh = TriangleMesh(np.array([[1.0, 1, 1], [5, 1, 1], [1, 3, 1], [1, 1, 2]]),
                        [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
    normalized, scale, offset = normalize_to_unit_cube(mesh)
    assert scale == pytest.approx(0.25)
    assert_allclose(offset, [3.0, 2.0, 1.5])
    assert_allclose(normalized.vertices.max(axis=0) - normalized.vertices.min(axis=0), [1.0, 0.5, 0.25])
    with pytest.raises(EmptyMeshError):
        normalize_to_unit_cube(TriangleMesh.empty())


def test_normalize_to_unit_cube_is_idempotent(rng):
    mesh = icosphere(radius=0.7).transformed(scale=2.5, offset=[-1.0, 3.0, 0.2],
                                            rotation=random_rotation(rng))
    once, _, _ = normalize_to_unit_cube(mesh)
    twice, scale, offset = normalize_to_unit_cube(once)
    assert scale == pytest.approx(1.0)
    assert_allclose(offset, 0.0, atol=1e-12)
    assert_allclose(twice.vertices, once.vertices, atol=1e-12)
