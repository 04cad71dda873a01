import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsefine.fine_match import PointCorrespondences
from coarsefine.geometry import RigidTransform, apply_transform, random_rotation, rotation_about_axis
from coarsefine.metrics import rte_rre
from coarsefine.registration import DegenerateError, procrustes, ransac, ransac_points, required_iterations


def test_procrustes_identity(rng):
    x = rng.normal(size=(10, 3))
    t = procrustes(x, x)
    np.testing.assert_allclose(t.as_matrix(), np.eye(4), atol=1e-9)


def test_procrustes_known_30_degrees(rng):
    r = rotation_about_axis([1.0, 2.0, 0.5], np.radians(30))
    tr = np.array([0.3, -1.0, 2.0])
    x = rng.normal(size=(10, 3))
    t = procrustes(x, x @ r.T + tr)
    np.testing.assert_allclose(t.rotation, r, atol=1e-9)
    np.testing.assert_allclose(t.translation, tr, atol=1e-9)


def test_procrustes_mirror_still_proper(rng):
    x = rng.normal(size=(12, 3))
    y = x * [1.0, 1.0, -1.0]
    t = procrustes(x, y)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0, abs=1e-9)


def test_procrustes_weights_ignore_zero_weight_outlier(rng):
    r = random_rotation(rng)
    x = rng.normal(size=(8, 3))
    y = x @ r.T
    y[0] += 10.0
    w = np.ones(8)
    w[0] = 0.0
    np.testing.assert_allclose(procrustes(x, y, w).rotation, r, atol=1e-9)


def test_procrustes_degenerate_inputs():
    with pytest.raises(DegenerateError):
        procrustes(np.eye(3)[:2], np.eye(3)[:2])
    line = np.outer(np.arange(5.0), [1.0, 1.0, 0.0])
    with pytest.raises(DegenerateError):
        procrustes(line, line)
    with pytest.raises(ValueError):
        procrustes(np.eye(3), np.eye(3), [1.0, -1.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_procrustes_translation_equivariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(10, 3))
    y = x @ random_rotation(rng).T + rng.normal(size=3) + rng.normal(scale=0.01, size=(10, 3))
    v = rng.normal(size=3)
    a = procrustes(x, y)
    b = procrustes(x + v, y + v)
    np.testing.assert_allclose(b.rotation, a.rotation, atol=1e-9)
    np.testing.assert_allclose(b.translation, a.translation + v - a.rotation @ v, atol=1e-9)


def identity_corr(n):
    return PointCorrespondences(np.arange(n), np.arange(n), np.ones(n), np.ones(n))


def test_ransac_all_inliers(rng):
    gt = RigidTransform(random_rotation(rng), rng.normal(size=3))
    x = rng.uniform(-1, 1, size=(50, 3))
    res = ransac(identity_corr(50), (x, gt.apply(x)), 1000, 0.05, 0)
    rte, rre = rte_rre(res.transform, gt)
    assert rte < 1e-6 and rre < 1e-6
    assert res.inlier_mask.all()


def test_ransac_half_outliers(rng):
    gt = RigidTransform(random_rotation(rng), rng.normal(size=3))
    x = rng.uniform(-1, 1, size=(200, 3))
    y = gt.apply(x) + rng.normal(scale=0.005, size=(200, 3))
    out = rng.random(200) < 0.5
    y[out] = rng.uniform(-3, 3, size=(out.sum(), 3))
    tau = 0.03
    res = ransac(identity_corr(200), (x, y), 1000, tau, 0)
    rte, _ = rte_rre(res.transform, gt)
    assert rte < 2 * tau
    d = np.linalg.norm(apply_transform(res.transform, x[res.inlier_mask]) - y[res.inlier_mask], axis=1)
    assert np.all(d <= tau)


def test_ransac_needs_three():
    with pytest.raises(DegenerateError):
        ransac(identity_corr(2), (np.eye(3), np.eye(3)), 10, 0.1, 0)


def test_ransac_deterministic(rng):
    x = rng.normal(size=(80, 3))
    y = x + rng.normal(scale=0.3, size=(80, 3))
    a = ransac_points(x, y, 500, 0.2, seed=4)
    b = ransac_points(x, y, 500, 0.2, seed=4)
    np.testing.assert_array_equal(a.transform.as_matrix(), b.transform.as_matrix())
    np.testing.assert_array_equal(a.inlier_mask, b.inlier_mask)


def test_inliers_only_residual_not_worse(rng):
    gt = RigidTransform(random_rotation(rng), rng.normal(size=3))
    x = rng.uniform(-1, 1, size=(150, 3))
    y = gt.apply(x) + rng.normal(scale=0.01, size=(150, 3))
    inl = rng.random(150) < 0.6
    y[~inl] += rng.normal(scale=1.0, size=((~inl).sum(), 3))
    full = ransac_points(x, y, 2000, 0.04, 1)
    only = ransac_points(x[inl], y[inl], 2000, 0.04, 1)

    def resid(t):
        return np.sqrt(np.mean(np.sum((apply_transform(t, x[inl]) - y[inl]) ** 2, axis=1)))

    assert resid(only.transform) <= resid(full.transform) + 1e-12


def test_required_iterations():
    assert required_iterations(0.0, 0.99) == np.inf
    assert required_iterations(1.0, 0.99) == 1.0
    assert required_iterations(0.5, 0.99) == pytest.approx(np.log(0.01) / np.log(1 - 0.125))
