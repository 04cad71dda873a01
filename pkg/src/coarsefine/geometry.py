"""Point containers, rigid transforms, voxel down-sampling and exact radius search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

ORTHO_TOL = 1e-9


def as_points(points, name: str = "points") -> np.ndarray:
    """Validate and return an ``(N, 3)`` float64 array.

    Indices into the returned array are the identities used by every
    correspondence downstream, so the order is never changed.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
        raise ValueError(f"{name} has a non-finite coordinate at row {bad}")
    return arr


@dataclass(frozen=True)
class RigidTransform:
    """A pose in SE(3): ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation has det != +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        if np.abs(m[3] - [0, 0, 0, 1]).max() > ORTHO_TOL:
            raise ValueError("last row of a rigid 4x4 matrix must be (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points) -> np.ndarray:
        return apply_transform(self, points)


def apply_transform(t: RigidTransform, points) -> np.ndarray:
    pts = as_points(points)
    return pts @ t.rotation.T + t.translation


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues' formula; ``axis`` need not be unit length."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from SO(3) via a random unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor(points / voxel_size).astype(np.int64)


def voxel_downsample(points, voxel_size: float, seed: int = 0):
    """Keep one randomly chosen original point per occupied voxel.

    Returns ``(kept_points, kept_indices)`` with ``kept_indices`` ascending, so
    the relative order of the input survives.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    pts = as_points(points)
    if len(pts) == 0:
        return pts.copy(), np.zeros(0, dtype=np.int64)
    keys = voxel_keys(pts, voxel_size)
    priority = np.random.default_rng(seed).permutation(len(pts))
    # sort by voxel key, then by random priority; the first of each run wins
    order = np.lexsort((priority, keys[:, 2], keys[:, 1], keys[:, 0]))
    sk = keys[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(sk[1:] != sk[:-1], axis=1)
    kept = np.sort(order[first])
    return pts[kept], kept


class NeighborIndex:
    """Exact Euclidean search over a fixed cloud (read-only after build)."""

    def __init__(self, points):
        self.points = as_points(points)
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    def query_radius(self, q, r: float) -> np.ndarray:
        if r < 0:
            raise ValueError("radius must be non-negative")
        if self._tree is None:
            return np.zeros(0, dtype=np.int64)
        idx = self._tree.query_ball_point(np.asarray(q, dtype=np.float64), r)
        return np.sort(np.asarray(idx, dtype=np.int64))

    def query_radius_many(self, queries, r: float) -> list[np.ndarray]:
        queries = as_points(queries, "queries")
        if self._tree is None or len(queries) == 0:
            return [np.zeros(0, dtype=np.int64) for _ in range(len(queries))]
        lists = self._tree.query_ball_point(queries, r, return_sorted=True)
        return [np.asarray(ix, dtype=np.int64) for ix in lists]

    def radius_pairs(self, queries, r: float):
        """Every ``(query, stored)`` pair within ``r`` as flat arrays ``(qi, pj, dist)``.

        Pairs are ordered by query index, then stored index.
        """
        queries = as_points(queries, "queries")
        if r < 0:
            raise ValueError("radius must be non-negative")
        empty = np.zeros(0, dtype=np.int64)
        if self._tree is None or len(queries) == 0:
            return empty, empty, np.zeros(0)
        out = cKDTree(queries).sparse_distance_matrix(self._tree, r, output_type="ndarray")
        qi = out["i"].astype(np.int64)
        pj = out["j"].astype(np.int64)
        dist = out["v"].astype(np.float64)
        order = np.lexsort((pj, qi))
        return qi[order], pj[order], dist[order]

    def nearest(self, queries, k: int = 1):
        """Distances and indices of the ``k`` nearest stored points."""
        queries = as_points(queries, "queries")
        if self._tree is None:
            raise ValueError("nearest() on an empty index")
        return self._tree.query(queries, k=k)


def radius_query(idx: NeighborIndex, q, r: float) -> np.ndarray:
    """Indices of every stored point within distance ``r`` of ``q`` (inclusive)."""
    return idx.query_radius(q, r)
