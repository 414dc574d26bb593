import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vgmls.geometry import (GeometryError, MANIFOLDS, NeighborIndex, PointCloud, Torus3D, analytic_frame,
                            fill_distance_estimate, get_manifold, projection_from_frames, read_cloud_csv,
                            sample_manifold, write_cloud_csv)


def test_sphere_single_point_has_unit_norm():
    c = sample_manifold(get_manifold("sphere"), 1, seed=3)
    assert c.N == 1
    assert np.linalg.norm(c.points[0]) == pytest.approx(1.0, abs=1e-15)


def test_torus3_at_origin_params():
    x = Torus3D(2, 1).embed(np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(x[0], [3.0, 0.0, 0.0], atol=1e-15)


def test_flat12_at_zero_params():
    x = get_manifold("flat12").embed(np.zeros((1, 3)))[0]
    expected = np.array([1, 0, 1, 0] * 3) / np.sqrt(5.0)
    np.testing.assert_allclose(x, expected, atol=1e-15)
    # each block of four has norm sqrt(1 + 1)/sqrt(5) at the origin
    np.testing.assert_allclose(np.linalg.norm(x.reshape(3, 4), axis=1), np.sqrt(2 / 5), atol=1e-15)


def test_torus_constants_validated():
    with pytest.raises(GeometryError):
        Torus3D(1.0, 2.0)
    with pytest.raises(GeometryError):
        get_manifold("klein")


@pytest.mark.parametrize("name", ["sphere", "torus3"])
@given(seed=st.integers(0, 2**31 - 1))
def test_samples_satisfy_implicit_equation(name, seed):
    m = get_manifold(name)
    c = sample_manifold(m, 50, seed)
    assert np.max(np.abs(m.residual(c.points))) < 1e-12


def test_flat12_samples_lie_on_circles():
    c = sample_manifold(get_manifold("flat12"), 200, 1)
    blocks = c.points.reshape(-1, 3, 2, 2) * np.sqrt(5.0)
    np.testing.assert_allclose(np.linalg.norm(blocks, axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("name", sorted(MANIFOLDS))
def test_sampling_is_deterministic(name):
    m = get_manifold(name)
    a, b = sample_manifold(m, 30, 7), sample_manifold(m, 30, 7)
    np.testing.assert_array_equal(a.points, b.points)
    assert a.param_coords.shape == (30, m.d)
    assert not np.array_equal(a.points, sample_manifold(m, 30, 8).points)


def test_sphere_frame_at_equator():
    T = analytic_frame(get_manifold("sphere"), np.array([np.pi / 2, 0.0]))
    P = projection_from_frames(T)
    np.testing.assert_allclose(P, np.diag([0.0, 1.0, 1.0]), atol=1e-15)


def test_torus3_frame_at_origin():
    T = analytic_frame(Torus3D(2, 1), np.array([0.0, 0.0]))
    np.testing.assert_allclose(projection_from_frames(T), np.diag([0.0, 1.0, 1.0]), atol=1e-15)


def test_flat12_metric_is_identity():
    m = get_manifold("flat12")
    p = np.random.default_rng(0).uniform(0, 2 * np.pi, (20, 3))
    J = m.jacobian(p)
    np.testing.assert_allclose(np.swapaxes(J, 1, 2) @ J, np.broadcast_to(np.eye(3), (20, 3, 3)), atol=1e-14)
    T = analytic_frame(m, p)
    np.testing.assert_allclose(projection_from_frames(T), projection_from_frames(J), atol=1e-14)


@pytest.mark.parametrize("name", sorted(MANIFOLDS))
def test_analytic_frames_orthonormal(name):
    m = get_manifold(name)
    c = sample_manifold(m, 100, 2)
    T = analytic_frame(m, c.param_coords)
    np.testing.assert_allclose(np.swapaxes(T, 1, 2) @ T, np.broadcast_to(np.eye(m.d), (100, m.d, m.d)),
                               atol=1e-12)
    P = projection_from_frames(T)
    np.testing.assert_allclose(P @ P, P, atol=1e-12)
    np.testing.assert_allclose(P, np.swapaxes(P, 1, 2), atol=1e-15)


def test_frame_tangent_to_embedding():
    # finite-difference tangent directions lie in the analytic tangent space
    m = get_manifold("torus9")
    p = np.array([[0.3, 1.1]])
    P = projection_from_frames(analytic_frame(m, p))[0]
    for k in range(2):
        e = np.zeros((1, 2))
        e[0, k] = 1e-6
        v = (m.embed(p + e) - m.embed(p - e))[0] / 2e-6
        np.testing.assert_allclose(P @ v, v, atol=1e-8)


def test_sphere_pole_is_rejected():
    with pytest.raises(GeometryError):
        analytic_frame(get_manifold("sphere"), np.array([0.0, 1.0]))


def test_collinear_query_returns_base_first():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    idx = NeighborIndex(PointCloud(pts, 1)).query([1], 3)
    assert idx[0, 0] == 1
    assert sorted(idx[0]) == [0, 1, 2]
    # equal distances broken by ascending index
    assert list(idx[0]) == [1, 0, 2]


def test_duplicate_points_flagged():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 0, 0]])
    with pytest.warns(UserWarning, match="duplicate"):
        ni = NeighborIndex(PointCloud(pts, 1))
    assert ni.duplicates == [(0, 2)]


def test_knn_matches_brute_force():
    c = sample_manifold(Torus3D(2, 1), 400, 11)
    K = 50
    idx = NeighborIndex(c).stencils(K)
    D = np.linalg.norm(c.points[:, None] - c.points[None], axis=-1)
    for i in range(c.N):
        order = np.lexsort((np.arange(c.N), D[i]))
        assert order[0] == i
        np.testing.assert_array_equal(idx[i], order[:K])
    radii = D[np.arange(c.N), idx[:, -1]]
    np.testing.assert_allclose(radii, np.sort(D, axis=1)[:, K - 1])


def test_knn_rejects_bad_K():
    c = sample_manifold(Torus3D(), 10, 0)
    with pytest.raises(GeometryError):
        NeighborIndex(c).query([0], 11)


def test_point_cloud_validation():
    with pytest.raises(GeometryError):
        PointCloud(np.zeros((3, 2)), 2)
    with pytest.raises(GeometryError):
        PointCloud(np.array([[np.nan, 0.0, 0.0]]), 2)


def test_fill_distance():
    m = get_manifold("sphere")
    with pytest.raises(GeometryError):
        fill_distance_estimate(sample_manifold(m, 1, 0))
    two = PointCloud(np.array([[0, 0, 1.0], [0, 0, -1.0]]), 2, manifold=m)
    h = fill_distance_estimate(two)
    assert 0 < h <= np.sqrt(2) + 1e-9
    assert h > 1.3  # near the equator the chord to either pole is sqrt(2)
    smaller = 0
    for seed in range(5):
        a = fill_distance_estimate(sample_manifold(m, 200, seed), seed=seed)
        b = fill_distance_estimate(sample_manifold(m, 400, seed), seed=seed)
        smaller += b <= a
    assert smaller >= 4


def test_cloud_csv_round_trip(tmp_path):
    m = get_manifold("torus9")
    c = sample_manifold(m, 25, 4)
    path = tmp_path / "cloud.csv"
    write_cloud_csv(path, c)
    header = path.read_text().splitlines()[0]
    assert header == ",".join([f"x{i}" for i in range(1, 10)] + ["p1", "p2"])
    back = read_cloud_csv(path)
    np.testing.assert_array_equal(back.points, c.points)
    np.testing.assert_array_equal(back.param_coords, c.param_coords)
    assert back.d == 2
