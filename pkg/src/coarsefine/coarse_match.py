"""Threshold-plus-minimum-count proposal of node correspondences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAU_FLOOR = 1e-6


@dataclass
class CoarseCorrespondences:
    src: np.ndarray
    tgt: np.ndarray
    confidence: np.ndarray
    tau_used: float = float("nan")

    def __len__(self):
        return len(self.src)

    def pairs(self):
        return list(zip(self.src.tolist(), self.tgt.tolist(), self.confidence.tolist()))


def _select(interior, tau):
    i, j = np.nonzero(interior > tau)
    conf = interior[i, j]
    # descending confidence, then (i, j) ascending
    order = np.lexsort((j, i, -conf))
    return i[order], j[order], conf[order]


def propose(conf, tau_c: float = 0.2, tau_m: int = 200) -> CoarseCorrespondences:
    """Interior entries above ``tau_c``; halve ``tau_c`` until at least ``tau_m`` are found.

    Halving stops at ``TAU_FLOOR`` or once every positive interior entry is
    already selected.
    """
    if not 0 < tau_c < 1:
        raise ValueError("tau_c must lie in (0, 1)")
    if tau_m < 0:
        raise ValueError("tau_m must be non-negative")
    interior = np.asarray(getattr(conf, "interior", conf), dtype=np.float64)
    n_positive = int(np.count_nonzero(interior > 0))
    tau = float(tau_c)
    count = int(np.count_nonzero(interior > tau))
    while count < tau_m and count < n_positive and tau > TAU_FLOOR:
        tau = max(tau / 2.0, TAU_FLOOR)
        count = int(np.count_nonzero(interior > tau))
    i, j, c = _select(interior, tau)
    return CoarseCorrespondences(i.astype(np.int64), j.astype(np.int64), c, tau)
