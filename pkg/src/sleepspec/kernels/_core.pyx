# Compiled twins of sleepspec.kernels._pure. Semantics must match the numpy
# fallback exactly (same tie-breaking, same shapes); only the evaluation
# strategy differs.

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def _empty_like_dtype(const real[:] probe, shape):
    if real is float:
        return np.empty(shape, dtype=np.float32)
    else:
        return np.empty(shape, dtype=np.float64)


@cython.boundscheck(False)
@cython.wraparound(False)
def conv3x3_forward(const real[:, :, :, ::1] x, const real[:, :, :, ::1] w, const real[::1] b):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oc = w.shape[0]
    y_np = _empty_like_dtype(b, (n, oc, h, wd))
    cdef real[:, :, :, ::1] y = y_np
    cdef Py_ssize_t nn, oo, cc, di, dj, ii, jj, si, sj, i0, i1, j0, j1
    cdef real wv, bv
    with nogil:
        for nn in range(n):
            for oo in range(oc):
                bv = b[oo]
                for ii in range(h):
                    for jj in range(wd):
                        y[nn, oo, ii, jj] = bv
                for cc in range(c):
                    for di in range(3):
                        si = di - 1
                        i0 = 0 if si >= 0 else -si
                        i1 = h if si <= 0 else h - si
                        for dj in range(3):
                            sj = dj - 1
                            j0 = 0 if sj >= 0 else -sj
                            j1 = wd if sj <= 0 else wd - sj
                            wv = w[oo, cc, di, dj]
                            if wv == 0:
                                continue
                            for ii in range(i0, i1):
                                for jj in range(j0, j1):
                                    y[nn, oo, ii, jj] += wv * x[nn, cc, ii + si, jj + sj]
    return y_np


@cython.boundscheck(False)
@cython.wraparound(False)
def conv3x3_backward(const real[:, :, :, ::1] x, const real[:, :, :, ::1] w,
                     const real[:, :, :, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oc = w.shape[0]
    dx_np = _empty_like_dtype(w[0, 0, 0, :], (n, c, h, wd))
    dw_np = _empty_like_dtype(w[0, 0, 0, :], (oc, c, 3, 3))
    db_np = _empty_like_dtype(w[0, 0, 0, :], (oc,))
    cdef real[:, :, :, ::1] dx = dx_np
    cdef real[:, :, :, ::1] dw = dw_np
    cdef real[::1] db = db_np
    cdef Py_ssize_t nn, oo, cc, di, dj, ii, jj, si, sj, i0, i1, j0, j1
    cdef real wv, acc, g
    with nogil:
        for nn in range(n):
            for cc in range(c):
                for ii in range(h):
                    for jj in range(wd):
                        dx[nn, cc, ii, jj] = 0
        for oo in range(oc):
            acc = 0
            for nn in range(n):
                for ii in range(h):
                    for jj in range(wd):
                        acc += dy[nn, oo, ii, jj]
            db[oo] = acc
        for oo in range(oc):
            for cc in range(c):
                for di in range(3):
                    si = di - 1
                    i0 = 0 if si >= 0 else -si
                    i1 = h if si <= 0 else h - si
                    for dj in range(3):
                        sj = dj - 1
                        j0 = 0 if sj >= 0 else -sj
                        j1 = wd if sj <= 0 else wd - sj
                        wv = w[oo, cc, di, dj]
                        acc = 0
                        for nn in range(n):
                            for ii in range(i0, i1):
                                for jj in range(j0, j1):
                                    g = dy[nn, oo, ii, jj]
                                    acc += g * x[nn, cc, ii + si, jj + sj]
                                    dx[nn, cc, ii + si, jj + sj] += wv * g
                        dw[oo, cc, di, dj] = acc
    return dx_np, dw_np, db_np


@cython.boundscheck(False)
@cython.wraparound(False)
def maxpool2x2_forward(const real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    y_np = _empty_like_dtype(x[0, 0, 0, :], (n, c, h2, w2))
    idx_np = np.empty((n, c, h2, w2), dtype=np.uint8)
    cdef real[:, :, :, ::1] y = y_np
    cdef unsigned char[:, :, :, ::1] idx = idx_np
    cdef Py_ssize_t nn, cc, i2, j2, bi, bj
    cdef real best, v
    cdef unsigned char bidx
    with nogil:
        for nn in range(n):
            for cc in range(c):
                for i2 in range(h2):
                    bi = 2 * i2
                    for j2 in range(w2):
                        bj = 2 * j2
                        best = x[nn, cc, bi, bj]
                        bidx = 0
                        v = x[nn, cc, bi, bj + 1]
                        if v > best:
                            best = v
                            bidx = 1
                        v = x[nn, cc, bi + 1, bj]
                        if v > best:
                            best = v
                            bidx = 2
                        v = x[nn, cc, bi + 1, bj + 1]
                        if v > best:
                            best = v
                            bidx = 3
                        y[nn, cc, i2, j2] = best
                        idx[nn, cc, i2, j2] = bidx
    return y_np, idx_np


@cython.boundscheck(False)
@cython.wraparound(False)
def maxpool2x2_backward(const real[:, :, :, ::1] dy,
                        const unsigned char[:, :, :, ::1] idx,
                        Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1]
    cdef Py_ssize_t h2 = dy.shape[2], w2 = dy.shape[3]
    dx_np = _empty_like_dtype(dy[0, 0, 0, :], (n, c, h, w))
    cdef real[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t nn, cc, i2, j2, ii, jj
    cdef unsigned char b
    with nogil:
        for nn in range(n):
            for cc in range(c):
                for ii in range(h):
                    for jj in range(w):
                        dx[nn, cc, ii, jj] = 0
                for i2 in range(h2):
                    for j2 in range(w2):
                        b = idx[nn, cc, i2, j2]
                        dx[nn, cc, 2 * i2 + (b >> 1), 2 * j2 + (b & 1)] = dy[nn, cc, i2, j2]
    return dx_np


@cython.boundscheck(False)
@cython.wraparound(False)
def tapered_spectra(const double[:, ::1] segments, const double[:, ::1] tapers,
                    const double[::1] freqs, double fs):
    cdef Py_ssize_t m = segments.shape[0], n = segments.shape[1]
    cdef Py_ssize_t nl = tapers.shape[0], nf = freqs.shape[0]
    table_np = (2.0 * np.pi / fs) * np.outer(np.asarray(freqs), np.arange(n))
    cos_np = np.cos(table_np)
    sin_np = np.sin(table_np)
    power_np = np.zeros((m, nf), dtype=np.float64)
    tap_np = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] cost = cos_np
    cdef double[:, ::1] sint = sin_np
    cdef double[:, ::1] power = power_np
    cdef double[::1] tap = tap_np
    cdef Py_ssize_t im, il, t, kf
    cdef double re, ims, v
    with nogil:
        for im in range(m):
            for il in range(nl):
                for t in range(n):
                    tap[t] = segments[im, t] * tapers[il, t]
                for kf in range(nf):
                    re = 0
                    ims = 0
                    for t in range(n):
                        v = tap[t]
                        re += v * cost[kf, t]
                        ims += v * sint[kf, t]
                    power[im, kf] += re * re + ims * ims
    power_np /= nl * fs
    return power_np
