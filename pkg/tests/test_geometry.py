import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsefine.geometry import (
    NeighborIndex,
    RigidTransform,
    apply_transform,
    as_points,
    radius_query,
    random_rotation,
    rotation_about_axis,
    voxel_downsample,
)
from oracles import radius_scan


def random_transform(seed):
    rng = np.random.default_rng(seed)
    return RigidTransform(random_rotation(rng), rng.normal(size=3))


def test_identity_transform_keeps_cloud(rng):
    pts = rng.normal(size=(20, 3))
    np.testing.assert_array_equal(apply_transform(RigidTransform.identity(), pts), pts)


def test_pure_translation():
    t = RigidTransform(np.eye(3), [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(apply_transform(t, [[0.0, 0.0, 0.0]]), [[1.0, 0.0, 0.0]])


def test_quarter_turn_about_z():
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    out = apply_transform(RigidTransform(rz, np.zeros(3)), [[1.0, 0.0, 0.0]])
    np.testing.assert_allclose(out, [[0.0, 1.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose(rotation_about_axis([0, 0, 1], np.pi / 2), rz, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_inverse_round_trip(seed):
    t = random_transform(seed)
    pts = np.random.default_rng(seed + 1).normal(size=(30, 3))
    back = apply_transform(t.inverse(), apply_transform(t, pts))
    np.testing.assert_allclose(back, pts, atol=1e-9)


def test_rigid_transform_rejects_non_rotations():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(2 * np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3), [np.nan, 0, 0])


def test_matrix_round_trip_and_compose():
    a, b = random_transform(1), random_transform(2)
    np.testing.assert_allclose(RigidTransform.from_matrix(a.as_matrix()).as_matrix(), a.as_matrix())
    np.testing.assert_allclose(a.compose(b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12)


def test_as_points_validation():
    assert as_points([]).shape == (0, 3)
    with pytest.raises(ValueError, match="shape"):
        as_points(np.zeros((4, 2)))
    with pytest.raises(ValueError, match="row 1"):
        as_points([[0, 0, 0], [0, np.inf, 0]])


def test_voxel_single_point():
    pts, kept = voxel_downsample([[0.3, 0.2, 0.1]], 0.05)
    np.testing.assert_array_equal(pts, [[0.3, 0.2, 0.1]])
    np.testing.assert_array_equal(kept, [0])


def test_voxel_two_points_one_cell_is_seeded():
    pts = [[0.01, 0.01, 0.01], [0.02, 0.02, 0.02]]
    picks = {int(voxel_downsample(pts, 1.0, seed)[1][0]) for seed in range(40)}
    assert picks == {0, 1}
    for seed in range(5):
        assert voxel_downsample(pts, 1.0, seed)[1].tolist() == voxel_downsample(pts, 1.0, seed)[1].tolist()
        assert len(voxel_downsample(pts, 1.0, seed)[1]) == 1


def test_voxel_unit_cube_corners_all_kept():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    pts, kept = voxel_downsample(corners, 0.5)
    assert len(kept) == 8
    np.testing.assert_array_equal(pts, corners)


def test_voxel_boundary_goes_to_lower_cell():
    # floor keys: 0.5 lies on the lower face of cell 1, so it shares a cell with 0.99
    _, kept = voxel_downsample([[0.49, 0, 0], [0.5, 0, 0], [0.99, 0, 0]], 0.5)
    assert len(kept) == 2


def test_voxel_empty_and_invalid():
    pts, kept = voxel_downsample(np.zeros((0, 3)), 0.1)
    assert pts.shape == (0, 3) and kept.size == 0
    with pytest.raises(ValueError):
        voxel_downsample([[0, 0, 0]], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.02, 0.5))
def test_voxel_properties(seed, size):
    pts = np.random.default_rng(seed).uniform(-1, 1, size=(300, 3))
    kept_pts, kept = voxel_downsample(pts, size, seed)
    keys = np.floor(kept_pts / size).astype(np.int64)
    assert len({tuple(k) for k in keys}) == len(kept)  # one point per voxel
    assert len(kept) == len({tuple(k) for k in np.floor(pts / size).astype(np.int64)})
    np.testing.assert_array_equal(kept_pts, pts[kept])  # original points, no averaging
    again, _ = voxel_downsample(kept_pts, size, seed)
    np.testing.assert_array_equal(again, kept_pts)  # idempotent


def test_radius_query_examples():
    idx = NeighborIndex([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    assert radius_query(idx, [1, 0, 0], 0.0).tolist() == [1]
    assert radius_query(idx, [50, 50, 50], 1.0).tolist() == []
    assert radius_query(idx, [1, 0, 0], 1.0).tolist() == [0, 1, 2]


def test_radius_query_matches_scan(rng):
    pts = rng.uniform(-1, 1, size=(1000, 3))
    idx = NeighborIndex(pts)
    for q in rng.uniform(-1.2, 1.2, size=(100, 3)):
        r = rng.uniform(0.0, 0.4)
        assert set(radius_query(idx, q, r).tolist()) == radius_scan(pts, q, r)


def test_radius_pairs_agrees_with_per_query_search(rng):
    pts = rng.uniform(-1, 1, size=(400, 3))
    queries = rng.uniform(-1, 1, size=(60, 3))
    idx = NeighborIndex(pts)
    qi, pj, dist = idx.radius_pairs(queries, 0.3)
    lists = idx.query_radius_many(queries, 0.3)
    for q in range(len(queries)):
        np.testing.assert_array_equal(pj[qi == q], lists[q])
    np.testing.assert_allclose(dist, np.linalg.norm(queries[qi] - pts[pj], axis=1), atol=1e-15)


def test_empty_index():
    idx = NeighborIndex(np.zeros((0, 3)))
    assert radius_query(idx, [0, 0, 0], 1.0).size == 0
    qi, pj, d = idx.radius_pairs([[0, 0, 0]], 1.0)
    assert qi.size == pj.size == d.size == 0
    with pytest.raises(ValueError):
        idx.query_radius([0, 0, 0], -1.0)
