/* Innermost Sinkhorn loops, kept in plain C so the compiler vectorises them.
 *
 * `live` is 1.0 for entries that take part and 0.0 for muted ones, or NULL
 * when nothing is muted. Muted entries keep their (finite) value and add
 * nothing; no infinities are involved, so finite-only maths is safe. Each
 * helper makes one sweep over a row that is then hot in cache. */
#ifndef COARSEFINE_SINKHORN_LOOPS_H
#define COARSEFINE_SINKHORN_LOOPS_H

#include <float.h>
#include <math.h>
#include <stddef.h>

/* add the pending column shift (if any); return the live log-sum-exp,
 * or -DBL_MAX when want_lse is 0 */
static inline double cf_row_begin(double *restrict x, const double *restrict live,
                                  const double *restrict pend, ptrdiff_t n, int want_lse)
{
    double m = -DBL_MAX, s = 0.0;
    ptrdiff_t j;
    if (pend) {
        if (live)
            for (j = 0; j < n; j++) x[j] += live[j] * pend[j];
        else
            for (j = 0; j < n; j++) x[j] += pend[j];
    }
    if (!want_lse)
        return -DBL_MAX;
    if (live) {
        for (j = 0; j < n; j++) m = (live[j] != 0.0 && x[j] > m) ? x[j] : m;
        for (j = 0; j < n; j++) s += live[j] * exp(fmin(x[j] - m, 0.0));
    } else {
        for (j = 0; j < n; j++) m = x[j] > m ? x[j] : m;
        for (j = 0; j < n; j++) s += exp(x[j] - m);
    }
    return m + log(s);
}

/* add the row shift and fold the row into the running column maxima */
static inline void cf_row_end(double *restrict x, const double *restrict live, double shift,
                              double *restrict cmax, ptrdiff_t n)
{
    ptrdiff_t j;
    if (live) {
        for (j = 0; j < n; j++) {
            x[j] += live[j] * shift;
            cmax[j] = (live[j] != 0.0 && x[j] > cmax[j]) ? x[j] : cmax[j];
        }
    } else {
        for (j = 0; j < n; j++) {
            x[j] += shift;
            cmax[j] = x[j] > cmax[j] ? x[j] : cmax[j];
        }
    }
}

static inline void cf_col_sum(const double *restrict x, const double *restrict live,
                              const double *restrict cmax, double *restrict csum, ptrdiff_t n)
{
    ptrdiff_t j;
    if (live)
        for (j = 0; j < n; j++) csum[j] += live[j] * exp(fmin(x[j] - cmax[j], 0.0));
    else
        for (j = 0; j < n; j++) csum[j] += exp(x[j] - cmax[j]);
}

#endif
