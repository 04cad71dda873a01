import numpy as np
import pytest

from coarsefine.geometry import RigidTransform, random_rotation
from coarsefine.io import (
    PointCloudFormatError,
    read_points,
    read_pose,
    write_ply,
    write_points,
    write_pose,
)


@pytest.mark.parametrize("name", ["c.ply", "c.csv"])
def test_point_round_trip(tmp_path, rng, name):
    pts = rng.normal(size=(25, 3))
    write_points(tmp_path / name, pts)
    np.testing.assert_array_equal(read_points(tmp_path / name), pts)


def test_ascii_ply_round_trip(tmp_path, rng):
    pts = rng.normal(size=(7, 3))
    write_ply(tmp_path / "a.ply", pts, binary=False)
    np.testing.assert_array_equal(read_points(tmp_path / "a.ply"), pts)


def test_ply_with_extra_float_properties(tmp_path):
    header = (
        "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
        "property float nx\nproperty float x\nproperty float y\nproperty float z\n"
        "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
    )
    (tmp_path / "h.ply").write_text(header + "9 1 2 3\n9 4 5 6\n")
    np.testing.assert_array_equal(read_points(tmp_path / "h.ply"), [[1, 2, 3], [4, 5, 6]])


def test_big_endian_float_ply(tmp_path):
    pts = np.array([[1.5, -2.0, 3.25]], dtype=">f4")
    header = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\n" \
             b"property float x\nproperty float y\nproperty float z\nend_header\n"
    (tmp_path / "b.ply").write_bytes(header + pts.tobytes())
    np.testing.assert_array_equal(read_points(tmp_path / "b.ply"), [[1.5, -2.0, 3.25]])


def test_bad_inputs(tmp_path):
    (tmp_path / "x.ply").write_text("not a ply\n")
    with pytest.raises(PointCloudFormatError, match="magic"):
        read_points(tmp_path / "x.ply")
    (tmp_path / "x.csv").write_text("1,2\n")
    with pytest.raises(PointCloudFormatError, match="x,y,z"):
        read_points(tmp_path / "x.csv")
    with pytest.raises(PointCloudFormatError, match="extension"):
        read_points(tmp_path / "x.obj")
    (tmp_path / "t.ply").write_bytes(
        b"ply\nformat binary_little_endian 1.0\nelement vertex 3\n"
        b"property double x\nproperty double y\nproperty double z\nend_header\n" + bytes(8))
    with pytest.raises(PointCloudFormatError, match="truncated"):
        read_points(tmp_path / "t.ply")


def test_pose_round_trip(tmp_path, rng):
    t = RigidTransform(random_rotation(rng), rng.normal(size=3))
    write_pose(tmp_path / "p.txt", t)
    back = read_pose(tmp_path / "p.txt")
    np.testing.assert_array_equal(back.as_matrix(), t.as_matrix())
    assert len((tmp_path / "p.txt").read_text().splitlines()) == 4


def test_pose_rejects_non_rotation(tmp_path):
    (tmp_path / "p.txt").write_text("2 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
    with pytest.raises(ValueError, match="rotation"):
        read_pose(tmp_path / "p.txt")
    (tmp_path / "q.txt").write_text("1 0 0\n")
    with pytest.raises(ValueError, match="16"):
        read_pose(tmp_path / "q.txt")
