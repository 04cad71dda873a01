"""Correspondence and registration quality metrics."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import RigidTransform, apply_transform, as_points

TAU_1 = 0.10  # inlier distance, m
TAU_2 = 0.05  # inlier-ratio threshold for feature matching recall
TAU_3 = 0.20  # RMSE threshold for registration recall, m


class EmptyCorrespondenceWarning(RuntimeWarning):
    pass


@dataclass
class PairEvaluation:
    inlier_ratio: float
    rmse: float
    rte: float
    rre: float
    registered: bool
    n_correspondences: int = 0

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, **asdict(self)}, sort_keys=True)


def residuals(c, clouds, t: RigidTransform) -> np.ndarray:
    px, py = (as_points(p) for p in clouds)
    return np.linalg.norm(apply_transform(t, px[c.src]) - py[c.tgt], axis=1)


def inlier_ratio(c, clouds, gt: RigidTransform, tau1: float = TAU_1) -> float:
    """Fraction of correspondences with residual strictly below ``tau1`` under ``gt``."""
    if len(c) == 0:
        warnings.warn("inlier ratio of an empty set defined as 0", EmptyCorrespondenceWarning,
                      stacklevel=2)
        return 0.0
    return float(np.count_nonzero(residuals(c, clouds, gt) < tau1) / len(c))


def feature_matching_recall(inlier_ratios, tau2: float = TAU_2) -> float:
    irs = np.asarray(inlier_ratios, dtype=np.float64)
    if irs.size == 0:
        raise ValueError("feature matching recall over an empty dataset")
    return float(np.count_nonzero(irs > tau2) / irs.size)


def gt_correspondences(src, tgt, gt: RigidTransform, tau1: float = TAU_1):
    """Mutual nearest neighbours closer than ``tau1`` once ``src`` is moved by ``gt``.

    Returns index arrays ``(i, j)``.
    """
    src = as_points(src)
    tgt = as_points(tgt)
    if len(src) == 0 or len(tgt) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    moved = apply_transform(gt, src)
    d_st, j_of_i = cKDTree(tgt).query(moved, k=1)
    _, i_of_j = cKDTree(moved).query(tgt, k=1)
    i = np.arange(len(src))
    keep = (i_of_j[j_of_i] == i) & (d_st < tau1)
    return i[keep], j_of_i[keep]


def rmse(t: RigidTransform, x, y) -> float:
    """Root mean square residual of ground-truth pairs ``x[i] <-> y[i]`` under ``t``."""
    x = as_points(x)
    y = as_points(y)
    if len(x) == 0:
        raise ValueError("RMSE over an empty ground-truth correspondence set")
    r = apply_transform(t, x) - y
    return float(np.sqrt(np.einsum("ij,ij->i", r, r).mean()))


def rmse_and_rr(estimated, gt_sets, tau3: float = TAU_3):
    """Per-pair RMSE over ground-truth pairs and the registration recall.

    ``gt_sets`` is a sequence of ``(x, y)`` coordinate arrays, one per pair.
    """
    errs = np.array([rmse(t, x, y) for t, (x, y) in zip(estimated, gt_sets, strict=True)])
    if errs.size == 0:
        raise ValueError("registration recall over an empty dataset")
    return errs, float(np.count_nonzero(errs < tau3) / errs.size)


def rte_rre(t: RigidTransform, gt: RigidTransform):
    """Translation error (m) and geodesic rotation error (rad)."""
    rte = float(np.linalg.norm(t.translation - gt.translation))
    cos = (np.trace(t.rotation.T @ gt.rotation) - 1.0) / 2.0
    return rte, float(np.arccos(np.clip(cos, -1.0, 1.0)))


def summarize(records) -> dict:
    """Dataset summary from per-pair :class:`PairEvaluation` records."""
    if not records:
        raise ValueError("cannot summarise an empty evaluation")
    irs = [r.inlier_ratio for r in records]
    return {
        "fmr": feature_matching_recall(irs),
        "rr": float(np.mean([r.registered for r in records])),
        "mean_rte": float(np.mean([r.rte for r in records])),
        "mean_rre": float(np.mean([r.rre for r in records])),
        "median_ir": float(np.median(irs)),
        "n_pairs": len(records),
    }
