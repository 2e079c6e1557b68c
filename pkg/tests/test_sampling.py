import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import chisquare

from src.errors import ParseError
from src.mesher import cell_size
from src.sampling import (
    SAMPLE_MAGIC,
    SDF_CLAMP,
    label_agreement,
    label_points,
    read_samples,
    sample_points,
    write_samples,
)


def test_uniform_points_fill_octants(sphere_tuple):
    points = sample_points(sphere_tuple, 8000, surface_fraction=0.0, seed=7)
    assert points.shape == (8000, 3)
    assert np.all(np.abs(points) <= 0.6)
    octant = (points > 0).astype(int) @ [1, 2, 4]
    counts = np.bincount(octant, minlength=8)
    assert chisquare(counts).pvalue > 0.01


def test_noise_free_surface_points_lie_on_fractured_surface(sphere_tuple):
    points = sample_points(sphere_tuple, 2000, surface_fraction=1.0, noise_sigmas=(0.0, 0.0), seed=1)
    assert np.max(np.abs(sphere_tuple.fractured(points).sdf)) <= cell_size(32)


def test_sampling_is_seeded(sphere_tuple):
    a = sample_points(sphere_tuple, 500, seed=[0, 4])
    b = sample_points(sphere_tuple, 500, seed=[0, 4])
    c = sample_points(sphere_tuple, 500, seed=[0, 5])
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert label_points(sphere_tuple, a).to_bytes() == label_points(sphere_tuple, b).to_bytes()


def test_sample_points_validates_arguments(sphere_tuple):
    with pytest.raises(ValueError):
        sample_points(sphere_tuple, 0)
    with pytest.raises(ValueError):
        sample_points(sphere_tuple, 10, surface_fraction=1.5)


def test_label_examples(sphere_tuple):
    probes = label_points(sphere_tuple, [[0.0, 0.0, 0.0], [0.0, 0.0, 0.3], [0.0, 0.0, 0.55]])
    c, b, f, r = (probes.label(key) for key in "cbfr")
    assert c.occ.tolist() == [1.0, 1.0, 0.0]
    assert b.occ.tolist() == [1.0, 0.0, 0.0]
    assert f.occ.tolist() == [1.0, 0.0, 0.0]
    assert r.occ.tolist() == [0.0, 1.0, 0.0]
    assert c.sdf[0] == pytest.approx(-SDF_CLAMP)
    assert c.sdf[2] == pytest.approx(SDF_CLAMP)
    assert f.sdf[1] > 0 and r.sdf[1] < 0


def test_stored_labels_are_consistent(sphere_tuple):
    points = sample_points(sphere_tuple, 3000, seed=2)
    probes = label_points(sphere_tuple, points)
    c, b, f, r = (probes.label(key) for key in "cbfr")
    assert label_agreement(probes) >= 0.99
    assert np.all(f.occ * r.occ == 0)
    assert np.all(f.occ + r.occ <= c.occ)
    for sample in (c, b, f, r):
        assert np.all(sample.sdf[sample.occ == 1] < 0)
        assert np.all(np.abs(sample.sdf) <= SDF_CLAMP + 1e-7)
        assert_allclose(np.linalg.norm(sample.nf, axis=1), 1.0, atol=1e-5)


def test_sample_set_access(sphere_tuple):
    probes = label_points(sphere_tuple, sample_points(sphere_tuple, 100, seed=0))
    assert len(probes.subset(slice(10, 20))) == 10
    assert probes.points.dtype == np.float64
    with pytest.raises(KeyError):
        probes.label("x")


def test_sample_file_round_trip(tmp_path, sphere_tuple):
    probes = label_points(sphere_tuple, sample_points(sphere_tuple, 200, seed=3))
    path = tmp_path / "samples" / "a.bin"
    write_samples(str(path), probes)
    assert path.read_bytes().startswith(SAMPLE_MAGIC)
    again = read_samples(str(path))
    assert again.to_bytes() == probes.to_bytes()


def test_bad_sample_files(tmp_path, sphere_tuple):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTSAMP" + bytes(8))
    with pytest.raises(ParseError):
        read_samples(str(bad))
    probes = label_points(sphere_tuple, sample_points(sphere_tuple, 20, seed=3))
    truncated = tmp_path / "short.bin"
    truncated.write_bytes(probes.to_bytes()[:-5])
    with pytest.raises(ParseError):
        read_samples(str(truncated))


def test_fractured_and_restoration_labels_come_from_the_cut(sphere_tuple):
    points = sample_points(sphere_tuple, 3000, seed=5)
    probes = label_points(sphere_tuple, points)
    f, r = probes.label("f"), probes.label("r")
    cut_f, cut_r = sphere_tuple.fractured(probes.points), sphere_tuple.restoration(probes.points)
    clear_f = np.abs(cut_f.sdf) > 1e-3
    clear_r = np.abs(cut_r.sdf) > 1e-3
    assert np.array_equal(f.occ[clear_f], cut_f.occ[clear_f].astype(np.uint8))
    assert np.array_equal(r.occ[clear_r], cut_r.occ[clear_r].astype(np.uint8))


def test_near_surface_points_hug_the_fractured_surface(sphere_tuple):
    sigma1 = 0.012
    points = sample_points(sphere_tuple, 4000, surface_fraction=1.0, noise_sigmas=(sigma1, 0.0025), seed=9)
    distance = sphere_tuple.fractured_mesh.surface_distance(points)
    assert np.mean(distance <= 3 * sigma1) >= 0.85
    assert np.median(distance[2000:]) < sigma1
