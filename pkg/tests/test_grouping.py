import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsefine.grouping import TIE_EPS, assign_points, build_patch_pair, truncate_group
from oracles import nearest_node_owner


def test_single_node_owns_everything(rng):
    a = assign_points(rng.normal(size=(30, 3)), [[0.0, 0.0, 0.0]])
    assert np.all(a.owner == 0)
    assert a.sizes().tolist() == [30]


def test_equidistant_point_is_seeded_and_stable():
    nodes = [[-1.0, 0, 0], [1.0, 0, 0]]
    owners = {int(assign_points([[0.0, 0, 0]], nodes, seed).owner[0]) for seed in range(40)}
    assert owners == {0, 1}
    assert assign_points([[0.0, 0, 0]], nodes, 3).owner[0] == assign_points([[0.0, 0, 0]], nodes, 3).owner[0]


def test_matches_nearest_node_oracle(rng):
    pts = rng.uniform(-1, 1, size=(100, 3))
    nodes = rng.uniform(-1, 1, size=(5, 3))
    want, margin = nearest_node_owner(pts, nodes)
    got = assign_points(pts, nodes, 0).owner
    clear = margin > TIE_EPS
    np.testing.assert_array_equal(got[clear], want[clear])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_groups_partition_points(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(rng.integers(1, 200), 3))
    nodes = pts[rng.choice(len(pts), size=min(len(pts), rng.integers(1, 10)), replace=False)]
    groups = assign_points(pts, nodes, seed).groups()
    allm = np.concatenate(groups)
    assert len(allm) == len(pts)
    np.testing.assert_array_equal(np.sort(allm), np.arange(len(pts)))


def test_assign_requires_nodes():
    with pytest.raises(ValueError):
        assign_points([[0, 0, 0]], np.zeros((0, 3)))


def test_truncate_exact_size():
    pts = np.arange(12, dtype=float).reshape(4, 3)
    slots, mask = truncate_group([0, 1, 2, 3], pts, pts[0], 4, np.random.default_rng(0))
    assert slots.tolist() == [0, 1, 2, 3]
    assert not mask.any()


def test_truncate_single_member_fills_with_repeats():
    pts = np.zeros((3, 3))
    slots, mask = truncate_group([2], pts, pts[0], 4, np.random.default_rng(0))
    assert slots.tolist() == [2, 2, 2, 2]
    assert mask.tolist() == [False, True, True, True]


def test_truncate_drops_farthest(rng):
    pts = rng.normal(size=(20, 3))
    node = np.zeros(3)
    members = np.arange(7)
    slots, mask = truncate_group(members, pts, node, 4, rng)
    d = np.linalg.norm(pts[members] - node, axis=1)
    dropped = set(members.tolist()) - set(slots.tolist())
    assert dropped == set(members[np.argsort(d)[-3:]].tolist())
    assert not mask.any()


def test_truncate_empty_group_uses_nearest_point():
    pts = np.array([[5.0, 0, 0], [0.5, 0, 0], [2.0, 0, 0]])
    slots, mask = truncate_group([], pts, np.zeros(3), 3, np.random.default_rng(0))
    assert slots.tolist() == [1, 1, 1]
    assert mask.all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 16))
def test_patch_slots_come_from_group(seed, k):
    rng = np.random.default_rng(seed)
    px, py = rng.uniform(size=(80, 3)), rng.uniform(size=(70, 3))
    nx, ny = px[:6], py[:5]
    gx = assign_points(px, nx, seed).groups()
    gy = assign_points(py, ny, seed).groups()
    fx, fy = rng.normal(size=(80, 4)), rng.normal(size=(70, 4))
    i, j = int(rng.integers(6)), int(rng.integers(5))
    p = build_patch_pair((i, j, 0.7), gx, gy, (px, py), (fx, fy), (nx, ny), k, seed)
    for patch, group, pts, feats in ((p.x, gx[i], px, fx), (p.y, gy[j], py, fy)):
        assert len(patch.indices) == k and len(patch.repeat_mask) == k
        assert set(patch.indices.tolist()) <= set(group.tolist())
        real = patch.indices[~patch.repeat_mask]
        assert len(set(real.tolist())) == len(real)
        assert len(real) == min(k, len(group))
        np.testing.assert_array_equal(patch.points, pts[patch.indices])
        np.testing.assert_array_equal(patch.features, feats[patch.indices])
    again = build_patch_pair((i, j, 0.7), gx, gy, (px, py), (fx, fy), (nx, ny), k, seed)
    np.testing.assert_array_equal(again.x.indices, p.x.indices)
    assert p.c_coarse == 0.7
