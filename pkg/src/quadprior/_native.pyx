# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_fallback.py``.

Arithmetic order mirrors the numpy versions; the extension is built with
``-ffp-contract=off`` so no fused multiply-adds change the rounding.
"""
import numpy as np
from libc.math cimport exp, log, sqrt, cos, sin, floor
from libc.stdint cimport uint64_t

cdef uint64_t GOLDEN_GAMMA = 0x9E3779B97F4A7C15ULL
cdef uint64_t M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t M2 = 0x94D049BB133111EBULL
cdef double TWO_PI = 6.283185307179586
cdef double POISSON_CROSSOVER = 30.0
cdef int POISSON_MAX_ITER = 1000


def correlate_rows(src, taps):
    cdef const double[:, ::1] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef const double[::1] t = np.ascontiguousarray(taps, dtype=np.float64)
    cdef Py_ssize_t rows = s.shape[0], length = s.shape[1], ntaps = t.shape[0]
    cdef Py_ssize_t radius = (ntaps - 1) // 2
    out = np.empty((rows, length), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, i, k, j
    cdef double acc
    with nogil:
        for r in range(rows):
            for i in range(length):
                acc = 0.0
                for k in range(ntaps):
                    j = i + k - radius
                    if j < 0:
                        j = 0
                    elif j >= length:
                        j = length - 1
                    acc = acc + t[k] * s[r, j]
                o[r, i] = acc
    return out


def im2col(x, int k, int stride, int pad):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    out = np.empty((n, c * k * k, ho * wo), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, iy, ix, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        for oy in range(ho):
                            iy = oy * stride + ki - pad
                            for ox in range(wo):
                                ix = ox * stride + kj - pad
                                if iy < 0 or iy >= h or ix < 0 or ix >= w:
                                    o[b, row, oy * wo + ox] = 0.0
                                else:
                                    o[b, row, oy * wo + ox] = xv[b, ch, iy, ix]
    return out


def col2im(cols, shape, int k, int stride, int pad):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(n, c * k * k, ho * wo)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, iy, ix, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        for oy in range(ho):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox * stride + kj - pad
                                if ix < 0 or ix >= w:
                                    continue
                                o[b, ch, iy, ix] = o[b, ch, iy, ix] + cv[b, row, oy * wo + ox]
    return out


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


cdef inline double _uniform_at(uint64_t key, uint64_t counter) nogil:
    cdef uint64_t z = key + (counter + 1) * GOLDEN_GAMMA
    return (<double>(_mix64(z) >> 11) + 0.5) * (1.0 / 9007199254740992.0)


def counter_uniform(Py_ssize_t n, key):
    cdef uint64_t kk = <uint64_t>key
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _uniform_at(kk, <uint64_t>i)
    return out


def gauss_poisson(x, double peak, double gauss_sigma, key):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef uint64_t kk = <uint64_t>key
    cdef Py_ssize_t n = xv.shape[0], e
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double u0, u1, u2, r, theta, zc, zs, lam, count, p, cdf, y
    cdef int it
    with nogil:
        for e in range(n):
            u0 = _uniform_at(kk, <uint64_t>(3 * e))
            u1 = _uniform_at(kk, <uint64_t>(3 * e + 1))
            u2 = _uniform_at(kk, <uint64_t>(3 * e + 2))
            r = sqrt(-2.0 * log(u1))
            theta = TWO_PI * u2
            zc = r * cos(theta)
            zs = r * sin(theta)
            lam = xv[e] if xv[e] > 0.0 else 0.0
            lam = lam * peak
            if lam < POISSON_CROSSOVER:
                count = 0.0
                p = exp(-lam)
                cdf = p
                it = 0
                while u0 > cdf and it < POISSON_MAX_ITER:
                    count = count + 1.0
                    p = p * (lam / count)
                    cdf = cdf + p
                    it += 1
            else:
                count = floor(lam + sqrt(lam) * zs + 0.5)
                if count < 0.0:
                    count = 0.0
            y = count / peak + gauss_sigma * zc
            if y < 0.0:
                y = 0.0
            if y > 1.0:
                y = 1.0
            o[e] = y
    return out
