"""Ground-truth targets and losses for the coarse and fine matching stages."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial import cKDTree

from . import transport
from .geometry import RigidTransform, apply_transform, as_points

LOG_FLOOR = 1e-12


class DegenerateLossWarning(RuntimeWarning):
    """The loss normaliser was zero; the loss is reported as 0."""


def _visible(points, other, gt: RigidTransform, tau_p: float) -> np.ndarray:
    """Mask of ``points`` that land strictly within ``tau_p`` of ``other`` under ``gt``."""
    pts = as_points(points)
    other = as_points(other, "other")
    if len(pts) == 0 or len(other) == 0:
        return np.zeros(len(pts), dtype=bool)
    d, _ = cKDTree(other).query(apply_transform(gt, pts), k=1)
    return d < tau_p


def overlap_ratio(group, other_cloud, gt: RigidTransform, tau_p: float) -> float:
    """Fraction of ``group`` with a point of ``other_cloud`` closer than ``tau_p`` after ``gt``."""
    group = as_points(group, "group")
    if len(group) == 0:
        raise ValueError("overlap_ratio of an empty group")
    return float(np.count_nonzero(_visible(group, other_cloud, gt, tau_p)) / len(group))


def pairwise_overlap_ratio(group_i, group_j, gt: RigidTransform, tau_p: float) -> float:
    return overlap_ratio(group_i, group_j, gt, tau_p)


def build_weight_matrix(groups_x, groups_y, clouds, gt: RigidTransform, tau_p: float) -> np.ndarray:
    """Overlap-based coarse target of shape ``(n'+1, m'+1)``.

    ``groups_x``/``groups_y`` are lists of index arrays into ``clouds[0]`` and
    ``clouds[1]``. Interior entries are ``min(r(i,j), r(j,i))``; the slack
    column holds ``1 - r(i)``, the slack row ``1 - r(j)``, the corner 0.
    """
    px, py = (as_points(c) for c in clouds)
    inv = gt.inverse()
    n, m = len(groups_x), len(groups_y)
    if any(len(g) == 0 for g in groups_x) or any(len(g) == 0 for g in groups_y):
        raise ValueError("every node group must be non-empty")
    w = np.zeros((n + 1, m + 1))

    vis_x = _visible(px, py, gt, tau_p)
    vis_y = _visible(py, px, inv, tau_p)
    for i, g in enumerate(groups_x):
        w[i, m] = 1.0 - np.count_nonzero(vis_x[g]) / len(g)
    for j, g in enumerate(groups_y):
        w[n, j] = 1.0 - np.count_nonzero(vis_y[g]) / len(g)

    # pair ratios only need the points that are visible at all
    trees_y = [cKDTree(py[g]) for g in groups_y]
    trees_x = [cKDTree(px[g]) for g in groups_x]
    moved_x = apply_transform(gt, px)
    moved_y = apply_transform(inv, py)
    r_xy = np.zeros((n, m))
    r_yx = np.zeros((n, m))
    for i, g in enumerate(groups_x):
        q = moved_x[g]
        for j in range(m):
            d, _ = trees_y[j].query(q, k=1)
            r_xy[i, j] = np.count_nonzero(d < tau_p) / len(g)
    for j, g in enumerate(groups_y):
        q = moved_y[g]
        for i in range(n):
            d, _ = trees_x[i].query(q, k=1)
            r_yx[i, j] = np.count_nonzero(d < tau_p) / len(g)
    w[:n, :m] = np.minimum(r_xy, r_yx)
    return w


def _weighted_nll(conf: np.ndarray, weight: np.ndarray):
    conf = np.asarray(conf, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if conf.shape != weight.shape:
        raise ValueError(f"shape mismatch: {conf.shape} vs {weight.shape}")
    total = weight.sum()
    if total <= 0:
        warnings.warn("zero total weight; loss defined as 0", DegenerateLossWarning, stacklevel=3)
        return 0.0
    active = weight > 0
    logs = np.log(np.maximum(conf[active], LOG_FLOOR))
    return float(-(weight[active] * logs).sum() / total)


def coarse_loss(conf, w) -> float:
    """Overlap-weighted negative log-likelihood of the coarse confidence matrix."""
    return _weighted_nll(getattr(conf, "values", conf), w)


def fine_binary(patch_pair, gt: RigidTransform, tau_p: float) -> np.ndarray:
    """``(k+1) x (k+1)`` 0/1 target for one patch pair.

    Slack entries are computed from the interior before repeated rows/columns
    are zeroed; the corner is always 0.
    """
    x, y = patch_pair.x, patch_pair.y
    kx, ky = len(x.indices), len(y.indices)
    moved = apply_transform(gt, x.points)
    d = np.linalg.norm(moved[:, None, :] - np.asarray(y.points)[None, :, :], axis=2)
    b = np.zeros((kx + 1, ky + 1))
    b[:kx, :ky] = d < tau_p
    b[:kx, ky] = np.maximum(0.0, 1.0 - b[:kx, :ky].sum(axis=1))
    b[kx, :ky] = np.maximum(0.0, 1.0 - b[:kx, :ky].sum(axis=0))
    b[:kx][x.repeat_mask] = 0.0
    b[:, :ky][:, y.repeat_mask] = 0.0
    b[kx, ky] = 0.0
    return b


def fine_loss(confs, binaries) -> float:
    """Negative log-likelihood over every patch, normalised by the number of targets."""
    confs = [np.asarray(getattr(c, "values", c), dtype=np.float64) for c in confs]
    binaries = [np.asarray(b, dtype=np.float64) for b in binaries]
    if len(confs) != len(binaries):
        raise ValueError("one binary matrix is needed per confidence matrix")
    if not confs:
        warnings.warn("no patches; loss defined as 0", DegenerateLossWarning, stacklevel=2)
        return 0.0
    for c, b in zip(confs, binaries):
        if c.shape != b.shape:
            raise ValueError(f"shape mismatch: {c.shape} vs {b.shape}")
    flat_c = np.concatenate([c.ravel() for c in confs])
    flat_b = np.concatenate([b.ravel() for b in binaries])
    return _weighted_nll(flat_c, flat_b)


def total_loss(lc: float, lf: float, lam: float = 1.0) -> float:
    return lc + lam * lf


def nll_upstream(conf: np.ndarray, weight: np.ndarray, total: float) -> np.ndarray:
    """d(loss)/d(log conf) for a weighted NLL term with normaliser ``total``.

    Entries under the log floor are clamped in the forward pass and therefore
    receive no gradient.
    """
    g = np.where(weight > 0, -weight / total, 0.0)
    return np.where(conf >= LOG_FLOOR, g, 0.0)


def coarse_loss_and_grad(scores: transport.ScoreMatrix, w, iters: int):
    """Coarse loss of ``sinkhorn(scores)`` and its gradient w.r.t. the scores."""
    conf = transport.sinkhorn(scores, iters, transport.COARSE, tol=0.0)
    w = np.asarray(w, dtype=np.float64)
    loss = coarse_loss(conf, w)
    if w.sum() <= 0:
        return loss, np.zeros_like(scores.values)
    up = nll_upstream(conf.values, w, w.sum())
    return loss, transport.sinkhorn_grad(scores, iters, transport.COARSE, up)


def fine_loss_and_grad(scores: list, binaries: list, iters: int):
    """Fine loss over several patches and per-patch gradients w.r.t. their scores."""
    confs = [transport.sinkhorn(s, iters, transport.FINE, tol=0.0) for s in scores]
    loss = fine_loss(confs, binaries)
    total = float(sum(np.asarray(b).sum() for b in binaries))
    if total <= 0:
        return loss, [np.zeros_like(s.values) for s in scores]
    grads = [
        transport.sinkhorn_grad(s, iters, transport.FINE, nll_upstream(c.values, np.asarray(b), total))
        for s, c, b in zip(scores, confs, binaries)
    ]
    return loss, grads
