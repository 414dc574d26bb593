import numpy as np
import pytest
from hypothesis import given, strategies as st

from vgmls.geometry import NeighborIndex, PointCloud, analytic_frame, get_manifold, sample_manifold
from vgmls.tangents import (FrameField, TangentFrameEstimator, coarse_frame_svd, estimate_frames,
                            projection_matrix, read_frames_csv, refine_frame_2d, refine_frame_general,
                            write_frames_csv)

from conftest import random_orthogonal


def test_coarse_frame_of_plane(rng):
    S = np.column_stack([rng.normal(size=(30, 2)), np.zeros(30)])
    T, flag = coarse_frame_svd(S, 2)
    np.testing.assert_allclose(projection_matrix(T), np.diag([1.0, 1.0, 0.0]), atol=1e-14)
    assert not flag


def test_collinear_stencil_flagged():
    t = np.linspace(0, 1, 10)
    S = np.column_stack([t, 2 * t, -t])
    _, flag = coarse_frame_svd(S, 2)
    assert flag


def test_sign_convention_is_deterministic(rng):
    S = rng.normal(size=(20, 4)) * [1, 1, 0.01, 0.01]
    T1, _ = coarse_frame_svd(S, 2)
    T2, _ = coarse_frame_svd(S[:, :] * 1.0, 2)
    np.testing.assert_array_equal(T1, T2)
    k = np.argmax(np.abs(T1), axis=0)
    assert np.all(T1[k, [0, 1]] > 0)


def test_refinement_keeps_plane_frame(rng):
    S = np.column_stack([rng.normal(size=(30, 2)), np.zeros(30)])
    T0, _ = coarse_frame_svd(S, 2)
    T, nrm = refine_frame_2d(S, T0, 3)
    np.testing.assert_allclose(T, T0, atol=1e-12)
    np.testing.assert_allclose(np.abs(nrm), [0, 0, 1], atol=1e-12)


def test_general_refinement_exact_on_affine_plane(rng):
    A = np.linalg.qr(rng.normal(size=(7, 3)))[0]
    S = rng.normal(size=(40, 3)) @ A.T + rng.normal(size=7)
    T0, _ = coarse_frame_svd(S, 3)
    T = refine_frame_general(S, T0, 2)
    np.testing.assert_allclose(projection_matrix(T), A @ A.T, atol=1e-12)


def test_cap_projection_error_shrinks_with_radius():
    m = get_manifold("sphere")
    rng = np.random.default_rng(0)
    errs = []
    radii = [0.8, 0.4, 0.2, 0.1]
    for r in radii:
        th = np.sqrt(rng.uniform(0, 1, 50)) * r
        ph = rng.uniform(0, 2 * np.pi, 50)
        S = np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
        # base on the rim of the cap, where the plain SVD frame is first-order accurate
        S[0] = S[np.argmax(th)]
        T, _ = coarse_frame_svd(S, 2)
        errs.append(np.linalg.norm(projection_matrix(T) - (np.eye(3) - np.outer(S[0], S[0]))))
    assert np.polyfit(np.log(radii), np.log(errs), 1)[0] == pytest.approx(1.0, abs=0.2)


@pytest.mark.parametrize("name,l", [("sphere", 3), ("torus3", 2), ("torus9", 3), ("flat12", 3)])
def test_estimated_frames_are_orthonormal_and_accurate(name, l):
    m = get_manifold(name)
    c = sample_manifold(m, 1500, 1)
    fr = estimate_frames(c, 40 if m.d == 2 else 60, l)
    T = fr.T
    np.testing.assert_allclose(np.swapaxes(T, 1, 2) @ T, np.broadcast_to(np.eye(m.d), (c.N, m.d, m.d)),
                               atol=1e-10)
    P = fr.projections()
    np.testing.assert_allclose(P @ P, P, atol=1e-10)
    P_true = projection_matrix(analytic_frame(m, c.param_coords))
    if m.d == 2:
        # flat12 stencils at this N are wider than its curvature radius, so only d=2 is checked here
        assert np.max(np.linalg.norm(P - P_true, axis=(1, 2))) < 0.3
    if name == "sphere":
        np.testing.assert_allclose(fr.normals, np.cross(T[:, :, 0], T[:, :, 1]), atol=1e-14)
        np.testing.assert_allclose(np.abs(np.einsum("ni,ni->n", fr.normals, c.points)), 1.0, atol=1e-2)


def test_projection_error_decays_on_sphere():
    m = get_manifold("sphere")
    errs = []
    Ns = [800, 1600, 3200]
    for N in Ns:
        c = sample_manifold(m, N, 3)
        fr = estimate_frames(c, 30, 2)
        P_true = projection_matrix(analytic_frame(m, c.param_coords))
        errs.append(np.max(np.linalg.norm(fr.projections() - P_true, axis=(1, 2))))
    slope = np.polyfit(np.log(Ns), np.log(errs), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.35)


def test_projection_trace_and_basis_examples(rng):
    T = np.eye(5)[:, :2]
    np.testing.assert_array_equal(projection_matrix(T), np.diag([1.0, 1, 0, 0, 0]))
    Q = np.linalg.qr(rng.normal(size=(10, 6, 3)))[0]
    P = projection_matrix(Q)
    np.testing.assert_allclose(np.trace(P, axis1=1, axis2=2), 3, atol=1e-10)
    np.testing.assert_allclose(P @ P, P, atol=1e-12)


@given(seed=st.integers(0, 10**6))
def test_projection_invariant_under_frame_rotation(seed):
    rng = np.random.default_rng(seed)
    fr = FrameField(np.linalg.qr(rng.normal(size=(8, 9, 2)))[0])
    O = random_orthogonal(rng, 8, 2)
    np.testing.assert_allclose(fr.rotated(O).projections(), fr.projections(), atol=1e-12)


def test_estimator_api():
    c = sample_manifold(get_manifold("torus3"), 400, 0)
    est = TangentFrameEstimator(d=2, K=30, l=2)
    T = est.fit(c.points).transform(c.points)
    assert T.shape == (400, 3, 2)
    assert est.projections_.shape == (400, 3, 3)
    assert est.get_params() == {"d": 2, "K": 30, "l": 2, "method": "auto"}
    np.testing.assert_allclose(T, estimate_frames(c, 30, 2).T)


def test_frames_csv_round_trip(tmp_path):
    c = sample_manifold(get_manifold("torus9"), 60, 0)
    fr = estimate_frames(c, 20, 2)
    write_frames_csv(tmp_path / "f.csv", fr)
    assert (tmp_path / "f.csv").read_text().splitlines()[0].startswith("point_index,t11,t12,t21")
    np.testing.assert_array_equal(read_frames_csv(tmp_path / "f.csv", 2).T, fr.T)


def test_bad_refinement_method():
    c = sample_manifold(get_manifold("torus9"), 60, 0)
    with pytest.raises(ValueError):
        estimate_frames(c, 20, 2, method="surface")
    with pytest.raises(ValueError):
        estimate_frames(c, 20, 2, method="magic")
