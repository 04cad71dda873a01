# cython: language_level=3
"""Compiled batched log-domain Sinkhorn; ``_pure.sinkhorn_batch`` is its numpy twin.

Built with relaxed float flags so the log-sum-exp loops vectorise. Results
match the numpy twin to round-off, not bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs
from libc.float cimport DBL_MAX

cnp.import_array()


cdef extern from "_sinkhorn_loops.h" nogil:
    double cf_row_begin(double* x, const double* live, const double* pend, Py_ssize_t n,
                        int want_lse)
    void cf_row_end(double* x, const double* live, double shift, double* cmax, Py_ssize_t n)
    void cf_col_sum(const double* x, const double* live, const double* cmax, double* csum,
                    Py_ssize_t n)


def sinkhorn_batch(
    const double[:, :, ::1] scores,
    const unsigned char[:, :, ::1] muted,
    const double[:, ::1] log_row,
    const double[:, ::1] log_col,
    const unsigned char[::1] row_active,
    const unsigned char[::1] col_active,
    int iters,
    double tol,
):
    cdef Py_ssize_t B = scores.shape[0], R = scores.shape[1], C = scores.shape[2]
    cdef Py_ssize_t b, i, j
    cdef int it
    cdef bint pending, any_muted
    cdef double viol, dev, shift
    out_arr = np.array(scores, dtype=np.float64, copy=True)
    mask = np.asarray(muted, dtype=bool)
    live_arr = np.ascontiguousarray(~mask, dtype=np.float64)
    has_mute_arr = mask.reshape(B, -1).any(axis=1).astype(np.uint8)
    row_n_arr = np.count_nonzero(~mask, axis=2).astype(np.int64)
    col_n_arr = np.count_nonzero(~mask, axis=1).astype(np.int64)
    used_arr = np.zeros(B, dtype=np.int64)
    if R == 0 or C == 0:
        return out_arr, used_arr
    cdef double[:, :, ::1] x = out_arr
    cdef const double[:, :, ::1] live = live_arr
    cdef const unsigned char[::1] has_mute = has_mute_arr
    cdef long long[:, ::1] row_n = row_n_arr
    cdef long long[:, ::1] col_n = col_n_arr
    cdef long long[::1] used = used_arr
    cdef double[::1] row_lse = np.empty(R, dtype=np.float64)
    cdef unsigned char[::1] row_live = np.empty(R, dtype=np.uint8)
    cdef double[::1] col_max = np.empty(C, dtype=np.float64)
    cdef double[::1] col_sum = np.empty(C, dtype=np.float64)
    cdef double[::1] col_shift = np.empty(C, dtype=np.float64)
    cdef const double* lv

    with nogil:
        for b in range(B):
            pending = False
            for it in range(iters):
                # row sums of the current state; the previous column shift is
                # folded in on the same sweep
                viol = 0.0
                for i in range(R):
                    lv = &live[b, i, 0] if has_mute[b] else NULL
                    row_live[i] = row_active[i] and row_n[b, i] > 0
                    row_lse[i] = cf_row_begin(&x[b, i, 0], lv,
                                              &col_shift[0] if pending else NULL, C, row_live[i])
                    if row_live[i]:
                        dev = fabs(exp(row_lse[i]) - exp(log_row[b, i]))
                        viol = dev if dev > viol else viol
                pending = False
                if it > 0 and tol > 0 and viol < tol:
                    break

                for j in range(C):
                    col_max[j] = -DBL_MAX
                    col_sum[j] = 0.0
                for i in range(R):
                    lv = &live[b, i, 0] if has_mute[b] else NULL
                    shift = log_row[b, i] - row_lse[i] if row_live[i] else 0.0
                    cf_row_end(&x[b, i, 0], lv, shift, &col_max[0], C)
                for i in range(R):
                    lv = &live[b, i, 0] if has_mute[b] else NULL
                    cf_col_sum(&x[b, i, 0], lv, &col_max[0], &col_sum[0], C)
                for j in range(C):
                    if col_active[j] and col_n[b, j] > 0:
                        col_shift[j] = log_col[b, j] - (col_max[j] + log(col_sum[j]))
                    else:
                        col_shift[j] = 0.0
                pending = True
                used[b] = it + 1
            if pending:
                for i in range(R):
                    lv = &live[b, i, 0] if has_mute[b] else NULL
                    cf_row_begin(&x[b, i, 0], lv, &col_shift[0], C, 0)
    return out_arr, used_arr
