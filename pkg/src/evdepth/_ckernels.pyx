# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Output is bit-identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()

ctypedef cnp.uint16_t u16
ctypedef cnp.int64_t i64
ctypedef cnp.int8_t i8


def voxel_accumulate(const u16[:] x, const u16[:] y, const i64[:] t, const i8[:] p,
                     i64 t0, i64 dt, int bins, int height, int width):
    out_arr = np.zeros((bins, height, width), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, n = t.shape[0]
    cdef double tstar, w, pol
    cdef i64 lower
    cdef double scale = bins - 1
    cdef double ddt = dt
    with nogil:
        for i in range(n):
            tstar = scale * <double>(t[i] - t0) / ddt
            lower = <i64>floor(tstar)
            pol = p[i]
            w = 1.0 - (tstar - <double>lower)
            if w > 0.0 and lower >= 0 and lower < bins:
                out[lower, y[i], x[i]] += pol * w
            w = 1.0 - (<double>(lower + 1) - tstar)
            if w > 0.0 and lower + 1 >= 0 and lower + 1 < bins:
                out[lower + 1, y[i], x[i]] += pol * w
    return out_arr


def cstr_accumulate(const u16[:] x, const u16[:] y, const i64[:] t, const i8[:] p,
                    i64 t0, i64 dt, int height, int width):
    counts_arr = np.zeros((2, height, width), dtype=np.int64)
    sums_arr = np.zeros((2, height, width), dtype=np.float64)
    cdef i64[:, :, ::1] counts = counts_arr
    cdef double[:, :, ::1] sums = sums_arr
    cdef Py_ssize_t i, n = t.shape[0]
    cdef int ch
    cdef double ddt = dt
    with nogil:
        for i in range(n):
            ch = 1 if p[i] < 0 else 0
            counts[ch, y[i], x[i]] += 1
            sums[ch, y[i], x[i]] += <double>(t[i] - t0) / ddt
    return counts_arr, sums_arr


def tore_ages(const u16[:] x, const u16[:] y, const i64[:] t, const i8[:] p,
              i64 t_query, int k, int height, int width):
    ages_arr = np.full((2 * k, height, width), -1, dtype=np.int64)
    fill_arr = np.zeros((2, height, width), dtype=np.int64)
    cdef i64[:, :, ::1] ages = ages_arr
    cdef i64[:, :, ::1] fill = fill_arr
    cdef Py_ssize_t i, n = t.shape[0]
    cdef int ch
    cdef i64 c
    with nogil:
        for i in range(n - 1, -1, -1):
            ch = 1 if p[i] < 0 else 0
            c = fill[ch, y[i], x[i]]
            if c < k:
                ages[ch * k + c, y[i], x[i]] = t_query - t[i]
                fill[ch, y[i], x[i]] = c + 1
    return ages_arr


def _threshold_pass(const double[:, ::1] frames, const i64[:] times, double threshold,
                    i64[:] out_t, i64[:] out_pix, i8[:] out_p, i64[:] out_iv,
                    i64[:] out_j, bint fill):
    cdef Py_ssize_t n_frames = frames.shape[0]
    cdef Py_ssize_t n_pix = frames.shape[1]
    cdef Py_ssize_t k, q, j, m = 0
    cdef double[::1] ref = np.array(frames[0], dtype=np.float64)
    cdef double l0, l1, diff, pol, frac, span
    cdef i64 t_a
    with nogil:
        for k in range(n_frames - 1):
            t_a = times[k]
            span = <double>(times[k + 1] - times[k])
            for q in range(n_pix):
                l0 = frames[k, q]
                l1 = frames[k + 1, q]
                j = 0
                while True:
                    diff = l1 - ref[q]
                    if not fabs(diff) >= threshold:
                        break
                    pol = 1.0 if diff > 0 else -1.0
                    ref[q] = ref[q] + pol * threshold
                    if fill:
                        frac = (ref[q] - l0) / (l1 - l0)
                        out_t[m] = t_a + <i64>floor(frac * span + 0.5)
                        out_pix[m] = q
                        out_p[m] = <i8>pol
                        out_iv[m] = k
                        out_j[m] = j
                    m += 1
                    j += 1
    return m


def threshold_events(log_frames, times, double threshold):
    n_frames, height, width = log_frames.shape
    frames = np.ascontiguousarray(log_frames, dtype=np.float64).reshape(n_frames, height * width)
    tt = np.ascontiguousarray(times, dtype=np.int64)
    e64 = np.zeros(0, dtype=np.int64)
    e8 = np.zeros(0, dtype=np.int8)
    n = _threshold_pass(frames, tt, threshold, e64, e64, e8, e64, e64, False)
    out_t = np.empty(n, dtype=np.int64)
    out_pix = np.empty(n, dtype=np.int64)
    out_p = np.empty(n, dtype=np.int8)
    out_iv = np.empty(n, dtype=np.int64)
    out_j = np.empty(n, dtype=np.int64)
    _threshold_pass(frames, tt, threshold, out_t, out_pix, out_p, out_iv, out_j, True)
    return out_t, out_pix, out_p, out_iv, out_j
