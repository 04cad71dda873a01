"""Pure-numpy twins of the compiled kernels (same signatures)."""

import numpy as np


def _masked_lse(x, live, axis):
    m = np.max(x, axis=axis, where=live, initial=-np.inf, keepdims=True)
    has = np.isfinite(m)
    shifted = np.where(live & has, x - np.where(has, m, 0.0), 0.0)
    s = np.sum(np.exp(shifted, where=live & has, out=np.zeros_like(x)), axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        lse = np.where(has, m + np.log(np.where(has, s, 1.0)), -np.inf)
    return lse, has


def sinkhorn_batch(scores, muted, log_row, log_col, row_active, col_active, iters, tol):
    x = np.array(scores, dtype=np.float64, copy=True)
    live = ~np.asarray(muted, dtype=bool)
    row_active = np.asarray(row_active, dtype=bool)
    col_active = np.asarray(col_active, dtype=bool)
    log_row = np.asarray(log_row, dtype=np.float64)[:, :, None]
    log_col = np.asarray(log_col, dtype=np.float64)[:, None, :]
    B = x.shape[0]
    used = np.zeros(B, dtype=np.int64)
    running = np.ones(B, dtype=bool)
    row_live = live & row_active[None, :, None]
    col_live = live & col_active[None, None, :]

    for it in range(iters):
        lse, has = _masked_lse(x, row_live, axis=2)
        ok = has & row_active[None, :, None]
        dev = np.where(ok, np.abs(np.exp(np.where(ok, lse, 0.0)) - np.exp(log_row)), 0.0)
        viol = dev.max(axis=(1, 2)) if dev.size else np.zeros(B)
        if it > 0 and tol > 0:
            running &= ~(viol < tol)
        if not running.any():
            break
        step = running[:, None, None] & row_live & ok
        x = np.where(step, x + (log_row - np.where(ok, lse, 0.0)), x)

        lse, has = _masked_lse(x, col_live, axis=1)
        ok = has & col_active[None, None, :]
        step = running[:, None, None] & col_live & ok
        x = np.where(step, x + (log_col - np.where(ok, lse, 0.0)), x)
        used[running] = it + 1
    return x, used


def count_inliers(src, tgt, rot, trans, thr2, chunk=256):
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    rot = np.asarray(rot, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    counts = np.zeros(len(rot), dtype=np.int64)
    sx, sy, sz = src[:, 0], src[:, 1], src[:, 2]
    for start in range(0, len(rot), chunk):
        r = rot[start:start + chunk]
        t = trans[start:start + chunk]
        # evaluation order mirrors the compiled kernel so both give identical counts
        res = []
        for a in range(3):
            v = r[:, a, 0, None] * sx + r[:, a, 1, None] * sy
            v = v + r[:, a, 2, None] * sz
            v = v + t[:, a, None]
            res.append(v - tgt[:, a])
        d2 = res[0] * res[0] + res[1] * res[1]
        d2 = d2 + res[2] * res[2]
        counts[start:start + chunk] = np.count_nonzero(d2 <= thr2, axis=1)
    return counts
