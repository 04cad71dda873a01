"""Hand-crafted rotation-invariant local descriptors and an external feature loader.

These are a stand-in for learned features: they exist so the matching math has
something geometric to chew on, not to compete with a trained network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import NeighborIndex, as_points

N_EIGEN = 4
N_BINS = 8
DIM = N_EIGEN + N_BINS + 1
EIG_FLOOR = 1e-9  # relative to the largest eigenvalue


class FeatureFileError(ValueError):
    pass


@dataclass
class FeatureSet:
    vectors: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"feature vectors must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vectors must be finite")
        self.vectors = v
        if self.degenerate is None:
            self.degenerate = ~np.any(v != 0.0, axis=1)
        else:
            self.degenerate = np.asarray(self.degenerate, dtype=bool)

    def __len__(self):
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def take(self, indices) -> "FeatureSet":
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureSet(self.vectors[indices], self.degenerate[indices])


def l2_normalize(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    out = np.zeros_like(v)
    ok = norms[:, 0] > 0
    out[ok] = v[ok] / norms[ok]
    return out


def _soft_histogram(seg: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    # linear interpolation between bin centres keeps the histogram continuous in
    # the input, so tiny rotations cannot flip a sample into another bin
    pos = np.clip(values * N_BINS - 0.5, 0.0, N_BINS - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, N_BINS - 1)
    w_hi = pos - lo
    hist = np.bincount(seg * N_BINS + lo, weights=1.0 - w_hi, minlength=n * N_BINS)
    hist += np.bincount(seg * N_BINS + hi, weights=w_hi, minlength=n * N_BINS)
    return hist.reshape(n, N_BINS).astype(np.float64)


def _block(n: int, seg: np.ndarray, nbr: np.ndarray):
    """One descriptor block from flat ``(query, neighbour coords)`` pairs."""
    counts = np.bincount(seg, minlength=n)
    if counts.sum() == 0:
        return np.zeros((n, DIM)), np.ones(n, dtype=bool)
    safe = np.maximum(counts, 1).astype(np.float64)
    centroid = np.stack(
        [np.bincount(seg, weights=nbr[:, a], minlength=n) for a in range(3)], axis=1
    ) / safe[:, None]
    d = nbr - centroid[seg]
    cov = np.empty((n, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            cov[:, a, b] = np.bincount(seg, weights=d[:, a] * d[:, b], minlength=n) / safe
            cov[:, b, a] = cov[:, a, b]
    evals, evecs = np.linalg.eigh(cov)
    # eigenvalues at round-off level are zero; without this, cbrt in the
    # omnivariance term would blow rotation noise of 1e-17 up to 1e-6
    evals = np.where(evals > EIG_FLOOR * evals[:, 2:3], evals, 0.0)
    l3, l2, l1 = evals[:, 0], evals[:, 1], evals[:, 2]

    degenerate = (counts < 3) | (l1 <= 1e-24)
    l1s = np.where(degenerate, 1.0, l1)
    eigen = np.stack(
        [(l1 - l2) / l1s, (l2 - l3) / l1s, l3 / l1s, np.cbrt(l1 * l2 * l3) / l1s], axis=1
    )

    normal = evecs[:, :, 0]
    dist = np.sqrt(np.einsum("ij,ij->i", d, d))
    moving = dist > 0
    cos = np.abs(np.einsum("ij,ij->i", d[moving], normal[seg[moving]])) / dist[moving]
    hist = _soft_histogram(seg[moving], np.clip(cos, 0.0, 1.0), n)
    hist /= np.maximum(hist.sum(axis=1, keepdims=True), 1.0)

    density = (counts / counts.max())[:, None]
    vec = l2_normalize(np.concatenate([eigen, hist, density], axis=1))
    vec[degenerate] = 0.0
    return vec, degenerate


def compute_descriptors(points, idx: NeighborIndex, radius) -> FeatureSet:
    """Describe each of ``points`` by the neighbourhood it has in ``idx``.

    ``idx`` may index a denser cloud than ``points`` (node descriptors are
    computed over the full point set). Each vector is the concatenation of

    * linearity, planarity, sphericity, omnivariance of the local covariance,
    * an 8-bin histogram of ``|cos|`` between the local normal and the offset
      of every neighbour from the neighbourhood centroid,
    * neighbour count divided by the largest count over ``points``,

    then L2-normalised. Fewer than 3 neighbours gives an all-zero vector and a
    ``degenerate`` flag.

    ``radius`` may also be a sequence, giving one block per scale; the blocks
    are concatenated and the whole vector re-normalised. A point is degenerate
    only if every block is.
    """
    radii = np.atleast_1d(np.asarray(radius, dtype=np.float64))
    if radii.ndim != 1 or radii.size == 0:
        raise ValueError("at least one radius is required")
    if not np.all(radii > 0):
        raise ValueError("radius must be positive")
    q = as_points(points)
    n = len(q)
    if n == 0:
        return FeatureSet(np.zeros((0, DIM * radii.size)), np.zeros(0, dtype=bool))

    # one search at the widest radius; narrower scales are subsets of it
    qi, pj, dist = idx.radius_pairs(q, float(radii.max()))
    nbr = idx.points[pj]
    blocks, flags = [], []
    for r in radii:
        keep = dist <= r
        vec, deg = _block(n, qi[keep], nbr[keep])
        blocks.append(vec)
        flags.append(deg)
    if radii.size == 1:
        return FeatureSet(blocks[0], flags[0])
    vec = l2_normalize(np.concatenate(blocks, axis=1))
    return FeatureSet(vec, np.logical_and.reduce(flags))


def standardize_pair(fx: FeatureSet, fy: FeatureSet, floor: float = 1e-6):
    """Centre and scale every dimension with statistics pooled over both sets.

    Hand-crafted descriptors share a large common component (most surfaces are
    locally flat), which makes every inner product close to 1. Removing the
    pooled mean and per-dimension spread leaves the part that discriminates.
    Degenerate rows stay zero.
    """
    live = np.concatenate([fx.vectors[~fx.degenerate], fy.vectors[~fy.degenerate]])
    if len(live) == 0:
        return fx, fy
    mu = live.mean(axis=0)
    sd = np.maximum(live.std(axis=0), floor)
    out = []
    for f in (fx, fy):
        v = l2_normalize((f.vectors - mu) / sd)
        v[f.degenerate] = 0.0
        out.append(FeatureSet(v, f.degenerate))
    return tuple(out)


def load_features(path, expected_rows: int | None = None) -> FeatureSet:
    """Read a CSV of feature vectors (one row per point) and re-normalise rows."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(line.split(","))
    if expected_rows is not None and len(rows) != expected_rows:
        raise FeatureFileError(
            f"{path}: expected {expected_rows} feature rows, found {len(rows)}"
        )
    if not rows:
        return FeatureSet(np.zeros((0, 0)))
    dim = len(rows[0])
    data = np.empty((len(rows), dim))
    for i, row in enumerate(rows):
        if len(row) != dim:
            raise FeatureFileError(f"{path}: row {i} has {len(row)} values, expected {dim}")
        try:
            data[i] = [float(v) for v in row]
        except ValueError as exc:
            raise FeatureFileError(f"{path}: row {i}: {exc}") from None
        if not np.all(np.isfinite(data[i])):
            raise FeatureFileError(f"{path}: non-finite feature value in row {i}")
    return FeatureSet(l2_normalize(data))


def save_features(path, features: FeatureSet) -> None:
    with open(path, "w") as fh:
        for row in features.vectors:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
