import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsefine.descriptors import (
    DIM,
    N_EIGEN,
    FeatureFileError,
    FeatureSet,
    compute_descriptors,
    load_features,
    save_features,
    standardize_pair,
)
from coarsefine.geometry import NeighborIndex, random_rotation


def blob(seed, n=120):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 3)) * [0.3, 0.2, 0.1]


def describe(pts, radius=0.25):
    return compute_descriptors(pts, NeighborIndex(pts), radius)


def test_isolated_point_is_degenerate():
    pts = np.array([[0.0, 0, 0], [5.0, 0, 0], [0, 5.0, 0]])
    f = describe(pts, 1.0)
    np.testing.assert_array_equal(f.vectors, np.zeros((3, DIM)))
    assert f.degenerate.all()


def test_plane_has_planarity_as_largest_eigen_feature():
    g = np.arange(-1.0, 1.0001, 0.05)
    plane = np.array([[x, y, 0.0] for x in g for y in g])
    inner = plane[np.abs(plane[:, :2]).max(axis=1) < 0.6]  # full discs only
    f = compute_descriptors(inner, NeighborIndex(plane), 0.3)
    eig = f.vectors[:, :N_EIGEN]
    assert not f.degenerate.any()
    # columns: linearity, planarity, sphericity, omnivariance
    assert np.all(np.argmax(eig, axis=1) == 1)


def test_unit_norm_or_zero():
    f = describe(blob(0))
    norms = np.linalg.norm(f.vectors, axis=1)
    np.testing.assert_allclose(norms[~f.degenerate], 1.0, atol=1e-6)
    assert np.all(norms[f.degenerate] == 0.0)
    assert np.all(np.isfinite(f.vectors))


@pytest.mark.parametrize("radius", [0.25, (0.15, 0.3)])
def test_rotation_invariance(radius):
    for seed in range(50):
        pts = blob(seed, 60)
        rng = np.random.default_rng(1000 + seed)
        moved = pts @ random_rotation(rng).T + rng.normal(size=3)
        a = describe(pts, radius)
        b = describe(moved, radius)
        assert np.abs(a.vectors - b.vectors).max() < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_equivariance(seed):
    pts = blob(seed, 80)
    perm = np.random.default_rng(seed).permutation(len(pts))
    a = describe(pts, (0.15, 0.3))
    b = describe(pts[perm], (0.15, 0.3))
    np.testing.assert_allclose(b.vectors, a.vectors[perm], atol=1e-12)
    np.testing.assert_array_equal(b.degenerate, a.degenerate[perm])


def test_multi_scale_shape_and_node_queries_denser_cloud():
    pts = blob(3, 200)
    nodes = pts[::10]
    f = compute_descriptors(nodes, NeighborIndex(pts), (0.1, 0.2, 0.4))
    assert f.vectors.shape == (20, 3 * DIM)
    assert compute_descriptors(np.zeros((0, 3)), NeighborIndex(pts), (0.1, 0.2)).dim == 2 * DIM


def test_single_scale_width_and_positive_radius():
    pts = blob(4)
    single = describe(pts, 0.2)
    assert single.vectors.shape[1] == DIM
    with pytest.raises(ValueError):
        describe(pts, 0.0)


def test_standardize_pair_is_unit_and_keeps_degenerate_zero():
    fx = describe(np.vstack([blob(5), [[50.0, 50, 50]]]))
    fy = describe(blob(6))
    sx, sy = standardize_pair(fx, fy)
    assert sx.degenerate[-1] and np.all(sx.vectors[-1] == 0)
    for s in (sx, sy):
        np.testing.assert_allclose(np.linalg.norm(s.vectors[~s.degenerate], axis=1), 1.0, atol=1e-12)


def test_feature_set_rejects_non_finite():
    with pytest.raises(ValueError):
        FeatureSet(np.array([[np.nan, 1.0]]))


def test_load_features_round_trip(tmp_path):
    f = FeatureSet(np.array([[3.0, 4.0], [1.0, 0.0], [0.0, 2.0]]))
    path = tmp_path / "f.csv"
    save_features(path, f)
    got = load_features(path, 3)
    assert len(got) == 3
    np.testing.assert_allclose(got.vectors, [[0.6, 0.8], [1.0, 0.0], [0.0, 1.0]])


def test_load_features_row_count_error(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("1,0\n0,1\n")
    with pytest.raises(FeatureFileError, match="expected 3 feature rows, found 2"):
        load_features(path, 3)


def test_load_features_nan_names_row(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("1,0\nnan,1\n0,1\n")
    with pytest.raises(FeatureFileError, match="row 1"):
        load_features(path, 3)
