"""Slack-augmented Sinkhorn in the log domain.

Two variants share one solver:

``coarse``
    every row and column (slack included) is normalised; interior rows and
    columns carry mass 1, the slack row carries ``m'`` and the slack column
    ``n'`` so the problem is balanced.
``fine``
    only the first ``r`` rows and first ``c`` columns are normalised (to 1);
    the slack row and column are never normalised themselves. Muted entries
    hold probability exactly 0 throughout.

Muted positions are carried by a boolean mask; no sentinel float is stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend, _pure

COARSE = "coarse"
FINE = "fine"
VARIANTS = (COARSE, FINE)

DEFAULT_ITERS = 100
DEFAULT_TOL = 1e-9


@dataclass
class ScoreMatrix:
    """``(r+1) x (c+1)`` log-domain scores; the last row and column are slack."""

    values: np.ndarray
    mute_mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise ValueError(f"score matrix must be at least 2x2, got {self.values.shape}")
        if self.mute_mask is None:
            self.mute_mask = np.zeros(self.values.shape, dtype=bool)
        self.mute_mask = np.asarray(self.mute_mask, dtype=bool)
        if self.mute_mask.shape != self.values.shape:
            raise ValueError("mute mask shape differs from score shape")
        if not np.all(np.isfinite(self.values[~self.mute_mask])):
            raise ValueError("non-muted scores must be finite")

    @property
    def interior_shape(self) -> tuple[int, int]:
        return self.values.shape[0] - 1, self.values.shape[1] - 1


@dataclass
class ConfidenceMatrix:
    values: np.ndarray
    variant: str
    mute_mask: np.ndarray
    iterations: int = 0

    @property
    def interior(self) -> np.ndarray:
        return self.values[:-1, :-1]

    @property
    def log_values(self) -> np.ndarray:
        """``log(values)`` with muted entries reported as ``-inf``."""
        with np.errstate(divide="ignore"):
            return np.log(self.values)


def assemble_coarse_scores(fx, fy, z: float = 0.0, scale: float = 1.0) -> ScoreMatrix:
    """Inner-product similarity with a slack row/column all set to ``z``.

    ``scale`` multiplies the interior inner products; it plays the role of the
    feature magnitude a learned encoder would carry. ``scale=1`` is the plain
    inner product.
    """
    fx = getattr(fx, "vectors", fx)
    fy = getattr(fy, "vectors", fy)
    fx = np.asarray(fx, dtype=np.float64)
    fy = np.asarray(fy, dtype=np.float64)
    if fx.ndim != 2 or fy.ndim != 2 or fx.shape[1] != fy.shape[1]:
        raise ValueError(f"feature dimension mismatch: {fx.shape} vs {fy.shape}")
    n, m = len(fx), len(fy)
    s = np.full((n + 1, m + 1), float(z))
    s[:n, :m] = scale * (fx @ fy.T)
    return ScoreMatrix(s)


def _marginals(shape, variant):
    r, c = shape[0] - 1, shape[1] - 1
    log_row = np.zeros(r + 1)
    log_col = np.zeros(c + 1)
    row_active = np.ones(r + 1, dtype=np.uint8)
    col_active = np.ones(c + 1, dtype=np.uint8)
    if variant == COARSE:
        log_row[r] = np.log(c)
        log_col[c] = np.log(r)
    elif variant == FINE:
        row_active[r] = 0
        col_active[c] = 0
    else:
        raise ValueError(f"unknown Sinkhorn variant {variant!r}")
    return log_row, log_col, row_active, col_active


def sinkhorn_many(scores, mute_masks, iters=DEFAULT_ITERS, variant=FINE, tol=DEFAULT_TOL,
                  backend=None):
    """Solve a batch of same-shaped problems; returns ``(confidences, iterations)``.

    ``scores`` and ``mute_masks`` are ``(B, R, C)`` arrays. Muted entries of the
    result are exactly 0.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    muted = np.ascontiguousarray(mute_masks, dtype=np.uint8)
    B = scores.shape[0]
    log_row, log_col, row_active, col_active = _marginals(scores.shape[1:], variant)
    log_row = np.ascontiguousarray(np.broadcast_to(log_row, (B, len(log_row))))
    log_col = np.ascontiguousarray(np.broadcast_to(log_col, (B, len(log_col))))
    kernel = backend or _backend.sinkhorn_batch
    x, used = kernel(scores, muted, log_row, log_col, row_active, col_active, int(iters), float(tol))
    live = muted == 0
    conf = np.exp(x, where=live, out=np.zeros_like(x))
    return conf, used


def sinkhorn(s: ScoreMatrix, iters: int = DEFAULT_ITERS, variant: str = COARSE,
             tol: float = DEFAULT_TOL) -> ConfidenceMatrix:
    """Run at most ``iters`` row/column normalisation rounds.

    Stops early once the largest row-marginal violation drops below ``tol``
    (columns are exact after every round); ``tol=0`` always runs ``iters``.
    """
    if variant == COARSE and min(s.interior_shape) < 1:
        raise ValueError("coarse variant needs at least one interior row and column")
    conf, used = sinkhorn_many(s.values[None], s.mute_mask[None], iters, variant, tol)
    return ConfidenceMatrix(conf[0], variant, s.mute_mask.copy(), int(used[0]))


def marginal_violation(conf: ConfidenceMatrix) -> float:
    """Largest absolute deviation of any normalised row/column sum from its target."""
    v = conf.values
    log_row, log_col, row_active, col_active = _marginals(v.shape, conf.variant)
    row_live = (~conf.mute_mask).any(axis=1) & row_active.astype(bool)
    col_live = (~conf.mute_mask).any(axis=0) & col_active.astype(bool)
    rows = np.abs(v.sum(axis=1) - np.exp(log_row))[row_live]
    cols = np.abs(v.sum(axis=0) - np.exp(log_col))[col_live]
    return float(max(rows.max(initial=0.0), cols.max(initial=0.0)))


def sinkhorn_grad(s: ScoreMatrix, iters: int, variant: str, upstream) -> np.ndarray:
    """Gradient of ``<upstream, log(sinkhorn(s))>`` with respect to ``s.values``.

    Exactly ``iters`` rounds are unrolled (no early exit); the forward pass is
    recomputed here and then differentiated step by step. Muted entries (and
    the upstream values sitting on them) get gradient 0.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != s.values.shape:
        raise ValueError("upstream shape differs from score shape")
    log_row, log_col, row_active, col_active = _marginals(s.values.shape, variant)
    live = ~s.mute_mask
    row_live = live & row_active.astype(bool)[:, None]
    col_live = live & col_active.astype(bool)[None, :]

    x = np.where(live, s.values, 0.0)
    tape = []
    for _ in range(iters):
        lse, has = _pure._masked_lse(x[None], row_live[None], axis=2)
        lse, has = lse[0], has[0] & row_active.astype(bool)[:, None]
        p = np.exp(np.where(row_live & has, x - np.where(has, lse, 0.0), -np.inf))
        tape.append(("row", p, row_live & has))
        x = np.where(row_live & has, x + (log_row[:, None] - np.where(has, lse, 0.0)), x)

        lse, has = _pure._masked_lse(x[None], col_live[None], axis=1)
        lse, has = lse[0], has[0] & col_active.astype(bool)[None, :]
        p = np.exp(np.where(col_live & has, x - np.where(has, lse, 0.0), -np.inf))
        tape.append(("col", p, col_live & has))
        x = np.where(col_live & has, x + (log_col[None, :] - np.where(has, lse, 0.0)), x)

    g = np.where(live, upstream, 0.0)
    for kind, p, step in reversed(tape):
        gs = np.where(step, g, 0.0)
        if kind == "row":
            g = np.where(step, g - p * gs.sum(axis=1, keepdims=True), g)
        else:
            g = np.where(step, g - p * gs.sum(axis=0, keepdims=True), g)
    return np.where(live, g, 0.0)
