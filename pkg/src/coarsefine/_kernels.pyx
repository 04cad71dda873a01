# cython: language_level=3
"""Compiled RANSAC scoring, built with strict IEEE semantics.

``_pure.count_inliers`` is its numpy twin and must return identical counts.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def count_inliers(
    const double[:, ::1] src,
    const double[:, ::1] tgt,
    const double[:, :, ::1] rot,
    const double[:, ::1] trans,
    double thr2,
):
    cdef Py_ssize_t H = rot.shape[0], N = src.shape[0]
    cdef Py_ssize_t h, n
    cdef double rx, ry, rz, d2
    cdef long long c
    counts_arr = np.zeros(H, dtype=np.int64)
    cdef long long[::1] counts = counts_arr
    with nogil:
        for h in range(H):
            c = 0
            for n in range(N):
                rx = rot[h, 0, 0] * src[n, 0] + rot[h, 0, 1] * src[n, 1] + rot[h, 0, 2] * src[n, 2] + trans[h, 0] - tgt[n, 0]
                ry = rot[h, 1, 0] * src[n, 0] + rot[h, 1, 1] * src[n, 1] + rot[h, 1, 2] * src[n, 2] + trans[h, 1] - tgt[n, 1]
                rz = rot[h, 2, 0] * src[n, 0] + rot[h, 2, 1] * src[n, 1] + rot[h, 2, 2] * src[n, 2] + trans[h, 2] - tgt[n, 2]
                d2 = rx * rx + ry * ry + rz * rz
                if d2 <= thr2:
                    c += 1
            counts[h] = c
    return counts_arr
