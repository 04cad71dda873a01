"""Point-to-node assignment and fixed-size patch construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import NeighborIndex, as_points

TIE_EPS = 1e-12
_TIE_PROBE = 8


@dataclass
class NodeAssignment:
    owner: np.ndarray
    n_nodes: int

    def groups(self) -> list[np.ndarray]:
        """Member point indices of every node, ascending."""
        order = np.argsort(self.owner, kind="stable")
        bounds = np.searchsorted(self.owner[order], np.arange(self.n_nodes + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(self.n_nodes)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.n_nodes)


def assign_points(points, nodes, seed: int = 0) -> NodeAssignment:
    """Give every point to its nearest node; exact ties are broken by a seeded draw."""
    pts = as_points(points)
    nds = as_points(nodes, "nodes")
    if len(nds) == 0:
        raise ValueError("assign_points needs at least one node")
    if len(pts) == 0:
        return NodeAssignment(np.zeros(0, dtype=np.int64), len(nds))
    index = NeighborIndex(nds)
    k = min(_TIE_PROBE, len(nds))
    dist, nn = index.nearest(pts, k=k)
    dist = dist.reshape(len(pts), k)
    nn = nn.reshape(len(pts), k)
    owner = nn[:, 0].astype(np.int64)
    if k == 1:
        return NodeAssignment(owner, len(nds))

    tied = (dist[:, 1] - dist[:, 0]) <= TIE_EPS
    rng = np.random.default_rng(seed)
    for p in np.flatnonzero(tied):
        # recompute distances directly so the tie set does not depend on tree internals
        d = np.linalg.norm(nds - pts[p], axis=1)
        cand = np.flatnonzero(d - d.min() <= TIE_EPS)
        owner[p] = cand[rng.integers(len(cand))]
    return NodeAssignment(owner, len(nds))


@dataclass
class Patch:
    indices: np.ndarray
    points: np.ndarray
    features: np.ndarray
    repeat_mask: np.ndarray

    @property
    def n_real(self) -> int:
        return int(np.count_nonzero(~self.repeat_mask))


@dataclass
class PatchPair:
    x: Patch
    y: Patch
    node_x: int
    node_y: int
    c_coarse: float


def truncate_group(members, points, node_xyz, k: int, rng: np.random.Generator):
    """Slot indices and repeat mask for one group truncated/supplemented to ``k``."""
    members = np.asarray(members, dtype=np.int64)
    if len(members) == 0:
        nearest = int(np.argmin(np.linalg.norm(points - node_xyz, axis=1)))
        return np.full(k, nearest, dtype=np.int64), np.ones(k, dtype=bool)
    if len(members) > k:
        d = np.linalg.norm(points[members] - node_xyz, axis=1)
        keep = np.sort(members[np.argsort(d, kind="stable")[:k]])
        return keep, np.zeros(k, dtype=bool)
    n_fill = k - len(members)
    fill = members[rng.integers(len(members), size=n_fill)]
    slots = np.concatenate([members, fill])
    mask = np.zeros(k, dtype=bool)
    mask[len(members):] = True
    return slots, mask


def build_patch(members, points, features, node_xyz, k, rng) -> Patch:
    slots, mask = truncate_group(members, points, node_xyz, k, rng)
    return Patch(slots, points[slots], features[slots], mask)


def build_patch_pair(coarse_pair, groups_x, groups_y, clouds, features, nodes, k: int = 64,
                     seed: int = 0) -> PatchPair:
    """Expand one coarse node pair ``(i', j', c_coarse)`` into two ``k``-slot patches.

    ``clouds``/``features``/``nodes`` are ``(x, y)`` tuples; ``features`` are
    raw ``(N, b)`` arrays. Overflowing groups keep the ``k`` members nearest the
    node; short groups are topped up by seeded sampling with replacement and
    the supplements are flagged in ``repeat_mask``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    i, j, c = coarse_pair
    i, j = int(i), int(j)
    rng = np.random.default_rng([seed, i, j])
    px, py = clouds
    fx, fy = features
    nx, ny = nodes
    fx = getattr(fx, "vectors", fx)
    fy = getattr(fy, "vectors", fy)
    patch_x = build_patch(groups_x[i], px, fx, nx[i], k, rng)
    patch_y = build_patch(groups_y[j], py, fy, ny[j], k, rng)
    return PatchPair(patch_x, patch_y, i, j, float(c))
