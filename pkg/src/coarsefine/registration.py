"""Closed-form weighted Procrustes and a seeded RANSAC around it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .geometry import RigidTransform, as_points

RANK_EPS = 1e-9
CHUNK = 1000


class DegenerateError(ValueError):
    """Too few or collinear correspondences to fix a rigid pose."""


@dataclass
class RegistrationResult:
    transform: RigidTransform
    inlier_mask: np.ndarray
    iterations_used: int

    @property
    def n_inliers(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))


def _kabsch(h: np.ndarray):
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.swapaxes(-1, -2) @ u.swapaxes(-1, -2)))
    d = np.where(d == 0, 1.0, d)
    fix = np.ones(h.shape[:-2] + (3,))
    fix[..., 2] = d
    r = (vt.swapaxes(-1, -2) * fix[..., None, :]) @ u.swapaxes(-1, -2)
    return r, s


def procrustes(x, y, weights=None) -> RigidTransform:
    """Weighted least-squares ``R, t`` minimising ``sum w ||R x + t - y||^2``.

    Reflections are corrected by flipping the smallest singular direction.
    """
    x = as_points(x, "x")
    y = as_points(y, "y")
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(x),) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite, non-negative, one per pair")
    if np.count_nonzero(w > 0) < 3:
        raise DegenerateError("need at least 3 pairs with positive weight")
    w = w / w.sum()
    cx = w @ x
    cy = w @ y
    h = ((x - cx) * w[:, None]).T @ (y - cy)
    r, s = _kabsch(h)
    if s[0] <= 0 or s[1] <= RANK_EPS * s[0]:
        raise DegenerateError("correspondences are collinear (rank-deficient cross-covariance)")
    # re-orthonormalise away SVD round-off before the strict SE(3) check
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    return RigidTransform(r, cy - r @ cx)


def _hypotheses(xs: np.ndarray, ys: np.ndarray):
    """Batched 3-point Kabsch; returns ``(R, t, valid)``."""
    cx = xs.mean(axis=1)
    cy = ys.mean(axis=1)
    h = (xs - cx[:, None]).swapaxes(1, 2) @ (ys - cy[:, None])
    r, s = _kabsch(h)
    valid = (s[:, 0] > 0) & (s[:, 1] > RANK_EPS * s[:, 0])
    t = cy - np.einsum("hij,hj->hi", r, cx)
    return np.ascontiguousarray(r), np.ascontiguousarray(t), valid


def required_iterations(inlier_ratio: float, confidence: float, sample_size: int = 3) -> float:
    if inlier_ratio <= 0:
        return math.inf
    good = inlier_ratio ** sample_size
    if good >= 1:
        return 1.0
    return math.log(1.0 - confidence) / math.log(1.0 - good)


def inlier_mask(t: RigidTransform, x, y, tau: float) -> np.ndarray:
    r = (x @ t.rotation.T + t.translation) - y
    return np.einsum("ij,ij->i", r, r) <= tau * tau


def ransac_points(x, y, iters: int = 50_000, inlier_tau: float = 0.05, seed: int = 0,
                  confidence: float | None = 0.9999, stop_ratio: float = 0.99,
                  refit_rounds: int = 20, backend=None) -> RegistrationResult:
    """RANSAC over paired coordinates ``x[i] <-> y[i]``.

    Hypotheses come from a seeded stream of 3-samples, scored in fixed-size
    chunks. The winner is the highest inlier count, lowest stream index on
    ties. Sampling stops at ``iters``, when a hypothesis explains more than
    ``stop_ratio`` of the pairs, or (when ``confidence`` is set) once the
    standard adaptive bound for that confidence is met. The winner is refit on
    its consensus set, repeatedly (at most ``refit_rounds`` times) until the
    set stops changing.
    """
    x = np.ascontiguousarray(as_points(x, "x"))
    y = np.ascontiguousarray(as_points(y, "y"))
    n = len(x)
    if n < 3:
        raise DegenerateError(f"RANSAC needs at least 3 correspondences, got {n}")
    count_inliers = backend or _backend.count_inliers
    rng = np.random.default_rng(seed)
    thr2 = inlier_tau * inlier_tau
    best_count, best_r, best_t = -1, None, None
    done = 0
    while done < iters:
        m = min(CHUNK, iters - done)
        idx = rng.integers(n, size=(m, 3))
        distinct = (idx[:, 0] != idx[:, 1]) & (idx[:, 0] != idx[:, 2]) & (idx[:, 1] != idx[:, 2])
        r, t, valid = _hypotheses(x[idx], y[idx])
        valid &= distinct
        counts = np.full(m, -1, dtype=np.int64)
        if valid.any():
            counts[valid] = count_inliers(x, y, r[valid], t[valid], thr2)
        h = int(np.argmax(counts))  # first maximum == lowest stream index
        if counts[h] > best_count:
            best_count, best_r, best_t = int(counts[h]), r[h], t[h]
        done += m
        if best_count > stop_ratio * n:
            break
        if confidence is not None and done >= required_iterations(best_count / n, confidence):
            break

    if best_r is None:
        raise DegenerateError("every sampled hypothesis was degenerate")
    u, _, vt = np.linalg.svd(best_r)
    pose = RigidTransform(u @ vt, best_t)
    mask = inlier_mask(pose, x, y, inlier_tau)
    # refit on the consensus set until it reaches a fixed point
    for _ in range(refit_rounds):
        if np.count_nonzero(mask) < 3:
            break
        try:
            refit = procrustes(x[mask], y[mask])
        except DegenerateError:
            break
        refit_mask = inlier_mask(refit, x, y, inlier_tau)
        if np.count_nonzero(refit_mask) < 3:
            break
        pose, changed, mask = refit, bool(np.any(refit_mask != mask)), refit_mask
        if not changed:
            break
    return RegistrationResult(pose, mask, done)


def ransac(c, clouds, iters: int = 50_000, inlier_tau: float = 0.05, seed: int = 0,
           confidence: float | None = 0.9999, stop_ratio: float = 0.99,
           refit_rounds: int = 20) -> RegistrationResult:
    """RANSAC on index correspondences ``c`` into ``clouds = (src_points, tgt_points)``."""
    px, py = (as_points(p) for p in clouds)
    if len(c) < 3:
        raise DegenerateError(f"RANSAC needs at least 3 correspondences, got {len(c)}")
    return ransac_points(px[c.src], py[c.tgt], iters, inlier_tau, seed, confidence, stop_ratio,
                         refit_rounds)
