import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.fields import (
    JointFieldSample,
    Provenance,
    Target,
    boolean_shape,
    break_branch,
    compose,
    compose_nf,
    compose_occupancy,
    compose_sdf,
    composed_shape,
    primitive_shape,
    subtract_sdf,
    transformed_shape,
)
from src.geometry import AnalyticPrimitive, random_rotation


def sample(occ, sdf, nf=None):
    sdf = np.atleast_1d(np.asarray(sdf, dtype=float))
    if nf is None:
        nf = np.tile([0.0, 0.0, 1.0], (len(sdf), 1))
    return JointFieldSample(occ, sdf, nf)


def test_joint_sample_promotes_scalars_and_checks_lengths():
    s = JointFieldSample(1.0, -0.1, [0.0, 0.0, 1.0])
    assert len(s) == 1
    with pytest.raises(ValueError):
        JointFieldSample([1.0, 0.0], [-0.1], [[0.0, 0.0, 1.0]])


def test_product_t_norm():
    c = sample([1.0, 0.8, 0.0], [-0.1, -0.1, 0.1])
    b = sample([1.0, 0.5, 1.0], [-0.1, 0.0, -0.1])
    assert_allclose(compose_occupancy(c, b, Target.FRACTURED), [1.0, 0.4, 0.0])
    assert_allclose(compose_occupancy(c, b, Target.RESTORATION), [0.0, 0.4, 0.0])


def test_fractured_branch_cases():
    # outside B: break value
    c, b = sample(1.0, -0.2), sample(0.0, 0.05)
    assert compose_sdf(c, b, Target.FRACTURED)[0] == pytest.approx(0.05)
    # inside B and s_B > s_C: break value
    c, b = sample(1.0, -0.2), sample(1.0, -0.1)
    assert compose_sdf(c, b, Target.FRACTURED)[0] == pytest.approx(-0.1)
    # inside B and s_B <= s_C: complete value
    c, b = sample(1.0, -0.05), sample(1.0, -0.1)
    assert compose_sdf(c, b, Target.FRACTURED)[0] == pytest.approx(-0.05)


def test_normals_follow_the_sdf_branch():
    nf_c = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    nf_b = np.array([[0.0, 2.0, 0.0], [1.0, 0.0, 0.0]])
    # point 0 outside B takes the break normal, point 1 inside B with s_B <= s_C keeps C
    c = sample([1.0, 1.0], [-0.2, -0.05], nf_c)
    b = sample([0.0, 1.0], [0.05, -0.1], nf_b)
    assert_allclose(compose_nf(c, b, Target.FRACTURED), [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    # restoration: point 0 has -s_B > s_C, point 1 is inside B; both take the flipped break normal
    assert_allclose(compose_nf(c, b, Target.RESTORATION), [[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0]])
    # a tie on -s_B = s_C outside B falls to the complete shape
    c, b = sample(1.0, -0.1, nf_c[:1]), sample(0.0, 0.1, nf_b[1:])
    assert_allclose(compose_nf(c, b, Target.RESTORATION), [[0.0, 0.0, 1.0]])


def test_restoration_branch_negates_break():
    nf_b = np.array([[1.0, 0.0, 0.0]])
    c, b = sample(1.0, -0.2), sample(1.0, -0.05, nf_b)
    out = compose(c, b, Target.RESTORATION)
    assert out.sdf[0] == pytest.approx(0.05)
    assert_allclose(out.nf, [[-1.0, 0.0, 0.0]])
    c, b = sample(1.0, -0.2), sample(0.0, 0.3)
    assert compose_sdf(c, b, Target.RESTORATION)[0] == pytest.approx(-0.2)


def test_ties_fall_to_complete_shape():
    assert not break_branch([1.0], [-0.1], [-0.1], Target.FRACTURED)[0]
    assert not break_branch([0.0], [0.1], [-0.1], Target.RESTORATION)[0]
    assert break_branch([0.5], [-0.3], [-0.1], Target.FRACTURED)[0]
    assert not break_branch([0.5], [0.3], [-0.1], Target.RESTORATION)[0]


def test_subtract_sdf():
    assert_allclose(subtract_sdf([-0.2, 0.1], [-0.3, 0.5]), [0.3, 0.1])


def random_primitive(rng):
    kind = rng.choice(["sphere", "box", "half-space"])
    if kind == "sphere":
        return AnalyticPrimitive("sphere", {"radius": rng.uniform(0.1, 0.4)},
                                 translation=rng.uniform(-0.2, 0.2, 3))
    if kind == "box":
        return AnalyticPrimitive("box", dict(zip(("hx", "hy", "hz"), rng.uniform(0.1, 0.4, 3))),
                                 rotation=random_rotation(rng), translation=rng.uniform(-0.2, 0.2, 3))
    return AnalyticPrimitive("half-space", {}, rotation=random_rotation(rng),
                             translation=rng.uniform(-0.1, 0.1, 3))


def test_composition_matches_set_membership(rng):
    for _ in range(10):
        c_prim = AnalyticPrimitive("sphere", {"radius": rng.uniform(0.2, 0.45)})
        b_prim = random_primitive(rng)
        c_field, b_field = primitive_shape(c_prim), primitive_shape(b_prim)
        points = rng.uniform(-0.6, 0.6, size=(20000, 3))
        c, b = c_field(points), b_field(points)
        clear = (np.abs(c.sdf) > 1e-3) & (np.abs(b.sdf) > 1e-3)
        in_c, in_b = c.sdf < 0, b.sdf < 0
        f = compose(c, b, Target.FRACTURED)
        r = compose(c, b, Target.RESTORATION)
        assert np.mean((f.occ[clear] > 0.5) == (in_c & in_b)[clear]) >= 0.995
        assert np.mean((r.occ[clear] > 0.5) == (in_c & ~in_b)[clear]) >= 0.995
        assert np.mean((f.sdf[clear] < 0) == (in_c & in_b)[clear]) >= 0.995
        assert np.mean((r.sdf[clear] < 0) == (in_c & ~in_b)[clear]) >= 0.995
        assert_allclose(np.linalg.norm(f.nf, axis=1), 1.0)


def test_partition_of_complete_shape(rng, sphere_field):
    b_field = primitive_shape(AnalyticPrimitive("half-space", {}, translation=[0.0, 0.0, 0.1]))
    points = rng.uniform(-0.6, 0.6, size=(5000, 3))
    f = composed_shape(sphere_field, b_field, Target.FRACTURED)(points)
    r = composed_shape(sphere_field, b_field, Target.RESTORATION)(points)
    c = sphere_field(points)
    assert_allclose(f.occ + r.occ, c.occ)
    assert np.all(f.occ * r.occ == 0)


def test_boolean_shapes(sphere_field):
    box = primitive_shape(AnalyticPrimitive("box", {"hx": 0.1, "hy": 0.1, "hz": 0.1},
                                            translation=[0.4, 0.0, 0.0]))
    points = np.array([[0.0, 0.0, 0.0], [0.45, 0.0, 0.0], [0.35, 0.0, 0.0]])
    assert_allclose(boolean_shape(sphere_field, box, "union")(points).occ, [1.0, 1.0, 1.0])
    assert_allclose(boolean_shape(sphere_field, box, "intersect")(points).occ, [0.0, 0.0, 1.0])
    carved = boolean_shape(sphere_field, box, "subtract")
    assert_allclose(carved(points).occ, [1.0, 0.0, 0.0])
    assert carved.provenance is Provenance.COMPOSED
    with pytest.raises(ValueError):
        boolean_shape(sphere_field, box, "xor")(points)


def test_transformed_shape_moves_field():
    cylinder = primitive_shape(AnalyticPrimitive("cylinder", {"radius": 0.05, "half_height": 0.3}))
    quarter = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    moved = transformed_shape(cylinder, quarter, np.array([0.1, 0.0, 0.0]))
    out = moved([[0.1, 0.25, 0.0], [0.1, 0.0, 0.25]])
    assert out.occ.tolist() == [1.0, 0.0]
    assert_allclose(np.linalg.norm(out.nf, axis=1), 1.0)
