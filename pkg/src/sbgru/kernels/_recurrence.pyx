# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend for the gated recurrence kernels.

Contract-identical to ``kernels.reference``: time-major float64 arrays,
weights with K + J rows (state block first). Matrix products go through
BLAS dgemm; gate math runs in C loops.
"""

import numpy as np

from libc.math cimport exp as c_exp
from libc.math cimport tanh as c_tanh
from scipy.linalg.cython_blas cimport dgemm

BACKEND_NAME = "compiled"


cdef inline double c_sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + c_exp(-x))
    e = c_exp(x)
    return e / (1.0 + e)


cdef void gemm_rm(bint ta, bint tb, int m, int n, int k, double alpha,
                  double* a, int lda, double* b, int ldb,
                  double beta, double* c) noexcept nogil:
    # Row-major C[m, n] = alpha * opA(A) @ opB(B) + beta * C, expressed as the
    # column-major product C^T = opB(B)^T @ opA(A)^T. lda/ldb are the row
    # lengths (shape[1]) of the underlying buffers.
    cdef char fa = 84 if ta else 78  # 'T' / 'N'
    cdef char fb = 84 if tb else 78
    dgemm(&fb, &fa, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &n)


def gru_forward(double[:, :, ::1] x, double[:, ::1] y0,
                double[:, ::1] wm, double[::1] bm,
                double[:, ::1] wr, double[::1] br,
                double[:, ::1] wy, double[::1] by):
    cdef int t_len = x.shape[0]
    cdef int batch = x.shape[1]
    cdef int j = x.shape[2]
    cdef int k = y0.shape[1]
    cdef int kj = k + j

    y_arr = np.empty((t_len, batch, k))
    m_arr = np.empty((t_len, batch, k))
    r_arr = np.empty((t_len, batch, k))
    c_arr = np.empty((t_len, batch, k))
    cdef double[:, :, ::1] y = y_arr
    cdef double[:, :, ::1] m = m_arr
    cdef double[:, :, ::1] r = r_arr
    cdef double[:, :, ::1] c = c_arr

    h_arr = np.empty((batch, kj))
    g_arr = np.empty((batch, kj))
    am_arr = np.empty((batch, k))
    ar_arr = np.empty((batch, k))
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] g = g_arr
    cdef double[:, ::1] am = am_arr
    cdef double[:, ::1] ar = ar_arr
    cdef double[:, ::1] yp = y0

    cdef int t, b, q
    if batch == 0 or t_len == 0:
        return y_arr, m_arr, r_arr, c_arr

    for t in range(t_len):
        for b in range(batch):
            for q in range(k):
                h[b, q] = yp[b, q]
            for q in range(j):
                h[b, k + q] = x[t, b, q]
        gemm_rm(0, 0, batch, k, kj, 1.0, &h[0, 0], kj, &wm[0, 0], k, 0.0, &am[0, 0])
        gemm_rm(0, 0, batch, k, kj, 1.0, &h[0, 0], kj, &wr[0, 0], k, 0.0, &ar[0, 0])
        for b in range(batch):
            for q in range(k):
                m[t, b, q] = c_sigmoid(am[b, q] + bm[q])
                r[t, b, q] = c_sigmoid(ar[b, q] + br[q])
                g[b, q] = r[t, b, q] * yp[b, q]
            for q in range(j):
                g[b, k + q] = x[t, b, q]
        # am is reused as the candidate pre-activation buffer
        gemm_rm(0, 0, batch, k, kj, 1.0, &g[0, 0], kj, &wy[0, 0], k, 0.0, &am[0, 0])
        for b in range(batch):
            for q in range(k):
                c[t, b, q] = c_tanh(am[b, q] + by[q])
                y[t, b, q] = (1.0 - m[t, b, q]) * yp[b, q] + m[t, b, q] * c[t, b, q]
        yp = y[t]
    return y_arr, m_arr, r_arr, c_arr


def gru_backward(double[:, :, ::1] x, double[:, ::1] y0,
                 double[:, ::1] wm, double[:, ::1] wr, double[:, ::1] wy,
                 double[:, :, ::1] y, double[:, :, ::1] m,
                 double[:, :, ::1] r, double[:, :, ::1] c,
                 double[:, :, ::1] dy):
    cdef int t_len = x.shape[0]
    cdef int batch = x.shape[1]
    cdef int j = x.shape[2]
    cdef int k = y0.shape[1]
    cdef int kj = k + j

    dx_arr = np.empty((t_len, batch, j))
    dwm_arr = np.zeros((kj, k))
    dwr_arr = np.zeros((kj, k))
    dwy_arr = np.zeros((kj, k))
    dbm_arr = np.zeros(k)
    dbr_arr = np.zeros(k)
    dby_arr = np.zeros(k)
    carry_arr = np.zeros((batch, k))
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, ::1] dwm = dwm_arr
    cdef double[:, ::1] dwr = dwr_arr
    cdef double[:, ::1] dwy = dwy_arr
    cdef double[::1] dbm = dbm_arr
    cdef double[::1] dbr = dbr_arr
    cdef double[::1] dby = dby_arr
    cdef double[:, ::1] carry = carry_arr

    h_arr = np.empty((batch, kj))
    g_arr = np.empty((batch, kj))
    dg_arr = np.empty((batch, kj))
    dh_arr = np.empty((batch, kj))
    dac_arr = np.empty((batch, k))
    dar_arr = np.empty((batch, k))
    dam_arr = np.empty((batch, k))
    nxt_arr = np.empty((batch, k))
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] g = g_arr
    cdef double[:, ::1] dg = dg_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] dac = dac_arr
    cdef double[:, ::1] dar = dar_arr
    cdef double[:, ::1] dam = dam_arr
    cdef double[:, ::1] nxt = nxt_arr
    cdef double[:, ::1] yp

    cdef int t, b, q
    cdef double d, dmv, dcv, mv, cv, rv
    if batch == 0 or t_len == 0:
        return (dx_arr, carry_arr, dwm_arr, dbm_arr, dwr_arr, dbr_arr,
                dwy_arr, dby_arr)

    for t in range(t_len - 1, -1, -1):
        yp = y[t - 1] if t > 0 else y0
        for b in range(batch):
            for q in range(k):
                d = dy[t, b, q] + carry[b, q]
                mv = m[t, b, q]
                cv = c[t, b, q]
                rv = r[t, b, q]
                dmv = d * (cv - yp[b, q])
                dcv = d * mv
                nxt[b, q] = d * (1.0 - mv)
                dac[b, q] = dcv * (1.0 - cv * cv)
                dam[b, q] = dmv * mv * (1.0 - mv)
                h[b, q] = yp[b, q]
                g[b, q] = rv * yp[b, q]
            for q in range(j):
                h[b, k + q] = x[t, b, q]
                g[b, k + q] = x[t, b, q]
        gemm_rm(1, 0, kj, k, batch, 1.0, &g[0, 0], kj, &dac[0, 0], k,
                1.0, &dwy[0, 0])
        gemm_rm(0, 1, batch, kj, k, 1.0, &dac[0, 0], k, &wy[0, 0], k,
                0.0, &dg[0, 0])
        for b in range(batch):
            for q in range(k):
                dby[q] += dac[b, q]
                rv = r[t, b, q]
                dar[b, q] = dg[b, q] * yp[b, q] * rv * (1.0 - rv)
                nxt[b, q] += dg[b, q] * rv
            for q in range(j):
                dx[t, b, q] = dg[b, k + q]
        gemm_rm(1, 0, kj, k, batch, 1.0, &h[0, 0], kj, &dar[0, 0], k,
                1.0, &dwr[0, 0])
        gemm_rm(1, 0, kj, k, batch, 1.0, &h[0, 0], kj, &dam[0, 0], k,
                1.0, &dwm[0, 0])
        gemm_rm(0, 1, batch, kj, k, 1.0, &dar[0, 0], k, &wr[0, 0], k,
                0.0, &dh[0, 0])
        gemm_rm(0, 1, batch, kj, k, 1.0, &dam[0, 0], k, &wm[0, 0], k,
                1.0, &dh[0, 0])
        for b in range(batch):
            for q in range(k):
                dbr[q] += dar[b, q]
                dbm[q] += dam[b, q]
                carry[b, q] = nxt[b, q] + dh[b, q]
            for q in range(j):
                dx[t, b, q] += dh[b, k + q]
    return (dx_arr, carry_arr, dwm_arr, dbm_arr, dwr_arr, dbr_arr,
            dwy_arr, dby_arr)
