"""Density-adaptive refinement of patch pairs into point correspondences."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import transport
from .grouping import PatchPair

DEFAULT_TAU_F = 0.05


@dataclass
class PointCorrespondences:
    src: np.ndarray
    tgt: np.ndarray
    c_fine: np.ndarray
    c_coarse: np.ndarray

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.tgt = np.asarray(self.tgt, dtype=np.int64).reshape(-1)
        self.c_fine = np.asarray(self.c_fine, dtype=np.float64).reshape(-1)
        self.c_coarse = np.asarray(self.c_coarse, dtype=np.float64).reshape(-1)
        n = len(self.src)
        if not (len(self.tgt) == len(self.c_fine) == len(self.c_coarse) == n):
            raise ValueError("correspondence fields have different lengths")

    @classmethod
    def empty(cls) -> "PointCorrespondences":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))

    @property
    def c_global(self) -> np.ndarray:
        return self.c_fine * self.c_coarse

    def __len__(self):
        return len(self.src)

    def take(self, idx) -> "PointCorrespondences":
        idx = np.asarray(idx, dtype=np.int64)
        return PointCorrespondences(self.src[idx], self.tgt[idx], self.c_fine[idx], self.c_coarse[idx])

    def remap(self, src_map, tgt_map) -> "PointCorrespondences":
        """Translate indices through lookup arrays (e.g. down-sampled -> raw)."""
        return PointCorrespondences(
            np.asarray(src_map)[self.src], np.asarray(tgt_map)[self.tgt], self.c_fine, self.c_coarse
        )

    def to_jsonl(self) -> str:
        lines = []
        for s, t, f, c, g in zip(self.src.tolist(), self.tgt.tolist(), self.c_fine.tolist(),
                                 self.c_coarse.tolist(), self.c_global.tolist()):
            lines.append(json.dumps({"src": s, "tgt": t, "c_fine": f, "c_coarse": c, "c_global": g}))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "PointCorrespondences":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows:
            return cls.empty()
        return cls(
            [r["src"] for r in rows], [r["tgt"] for r in rows],
            [r["c_fine"] for r in rows], [r["c_coarse"] for r in rows],
        )


def fine_scores(p: PatchPair, z: float = 0.0, scale: float = 1.0) -> transport.ScoreMatrix:
    """Full ``(k+1) x (k+1)`` score matrix of a patch pair with repeats muted."""
    kx, ky = len(p.x.indices), len(p.y.indices)
    fx, fy = np.asarray(p.x.features), np.asarray(p.y.features)
    if fx.shape[1] != fy.shape[1]:
        raise ValueError("feature dimension differs between patches")
    s = np.full((kx + 1, ky + 1), float(z))
    s[:kx, :ky] = scale * (fx @ fy.T)
    mask = np.zeros(s.shape, dtype=bool)
    mask[:kx][p.x.repeat_mask] = True
    mask[:, :ky][:, p.y.repeat_mask] = True
    mask[kx, ky] = True
    return transport.ScoreMatrix(s, mask)


def select_row_col_max(conf: np.ndarray, mute: np.ndarray, tau_f: float):
    """Interior entries that are the largest of their row or of their column.

    Maxima are taken over live entries including the slack column/row, so a
    point whose best option is "unmatched" contributes nothing from its row.
    """
    live = ~mute
    c = np.where(live, conf, -1.0)
    row_max = c.max(axis=1, keepdims=True)
    col_max = c.max(axis=0, keepdims=True)
    inner = np.zeros(conf.shape, dtype=bool)
    inner[:-1, :-1] = True
    picked = inner & live & (conf > tau_f) & ((c == row_max) | (c == col_max))
    return np.nonzero(picked)


def refine_patches(pairs: list[PatchPair], iters: int = transport.DEFAULT_ITERS,
                   tau_f: float = DEFAULT_TAU_F, z: float = 0.0, scale: float = 1.0,
                   tol: float = transport.DEFAULT_TOL, backend=None):
    """Refine many patch pairs in one batched Sinkhorn call.

    Repeated slots are muted across their whole row/column, so they carry no
    mass and can be dropped before solving; each problem is compacted to its
    real slots and padded (muted) to a common shape. Returns one
    ``PointCorrespondences`` per pair plus the number of live score entries
    that were evaluated.
    """
    results = [PointCorrespondences.empty() for _ in pairs]
    if not pairs:
        return results, 0
    real_x = [np.flatnonzero(~p.x.repeat_mask) for p in pairs]
    real_y = [np.flatnonzero(~p.y.repeat_mask) for p in pairs]
    todo = [l for l in range(len(pairs)) if len(real_x[l]) and len(real_y[l])]
    if not todo:
        return results, 0
    R = max(len(real_x[l]) for l in todo)
    C = max(len(real_y[l]) for l in todo)
    B = len(todo)
    scores = np.zeros((B, R + 1, C + 1))
    mute = np.ones((B, R + 1, C + 1), dtype=bool)
    evaluated = 0
    for b, l in enumerate(todo):
        p = pairs[l]
        rx, ry = real_x[l], real_y[l]
        nx, ny = len(rx), len(ry)
        fx = np.asarray(p.x.features)[rx]
        fy = np.asarray(p.y.features)[ry]
        if fx.shape[1] != fy.shape[1]:
            raise ValueError("feature dimension differs between patches")
        scores[b, :nx, :ny] = scale * (fx @ fy.T)
        scores[b, :nx, C] = z
        scores[b, R, :ny] = z
        mute[b, :nx, :ny] = False
        mute[b, :nx, C] = False
        mute[b, R, :ny] = False
        evaluated += (nx + 1) * (ny + 1) - 1

    conf, _ = transport.sinkhorn_many(scores, mute, iters, transport.FINE, tol, backend=backend)
    for b, l in enumerate(todo):
        p = pairs[l]
        ii, jj = select_row_col_max(conf[b], mute[b], tau_f)
        sx = real_x[l][ii]
        sy = real_y[l][jj]
        results[l] = PointCorrespondences(
            p.x.indices[sx], p.y.indices[sy], conf[b][ii, jj], np.full(len(ii), p.c_coarse)
        )
    return results, evaluated


def refine_patch(p: PatchPair, iters: int = transport.DEFAULT_ITERS,
                 tau_f: float = DEFAULT_TAU_F, z: float = 0.0, scale: float = 1.0,
                 tol: float = transport.DEFAULT_TOL) -> PointCorrespondences:
    res, _ = refine_patches([p], iters, tau_f, z, scale, tol)
    return res[0]


def pool(lists) -> PointCorrespondences:
    """Union over ``(src, tgt)``; duplicates keep the larger ``c_global``.

    Output is sorted by ``c_global`` descending with ``(src, tgt)`` ascending
    as the tie-break, so the result does not depend on input order.
    """
    lists = [c for c in lists if len(c)]
    if not lists:
        return PointCorrespondences.empty()
    src = np.concatenate([c.src for c in lists])
    tgt = np.concatenate([c.tgt for c in lists])
    cf = np.concatenate([c.c_fine for c in lists])
    cc = np.concatenate([c.c_coarse for c in lists])
    cg = cf * cc
    order = np.lexsort((-cc, -cf, -cg, tgt, src))
    s, t = src[order], tgt[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = (s[1:] != s[:-1]) | (t[1:] != t[:-1])
    keep = order[first]
    final = keep[np.lexsort((tgt[keep], src[keep], -cg[keep]))]
    return PointCorrespondences(src[final], tgt[final], cf[final], cc[final])


def sample(c: PointCorrespondences, n: int, seed: int = 0) -> PointCorrespondences:
    """Draw ``n`` correspondences without replacement, probability ∝ ``c_global``.

    The subset keeps the input order.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n >= len(c):
        return c
    if n == 0:
        return c.take(np.zeros(0, dtype=np.int64))
    w = c.c_global
    rng = np.random.default_rng(seed)
    positive = np.count_nonzero(w > 0)
    if positive < n:
        # zero-weight entries can only fill the remainder
        chosen = np.flatnonzero(w > 0)
        rest = np.flatnonzero(w <= 0)
        chosen = np.concatenate([chosen, rng.choice(rest, size=n - positive, replace=False)])
    else:
        chosen = rng.choice(len(c), size=n, replace=False, p=w / w.sum())
    return c.take(np.sort(chosen))
