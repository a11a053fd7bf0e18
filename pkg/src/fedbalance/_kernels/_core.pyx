# cython: language_level=3
"""Compiled hot kernels: conv, pooling, bilinear warp, separable blur.

Mirrors numpy_backend semantics exactly (same accumulation order, same
tie-breaking); selected at import by fedbalance._kernels.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def conv3x3_forward(cnp.ndarray x_arr, cnp.ndarray w_arr, cnp.ndarray b_arr):
    cdef const double[:, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef const double[:, :, ::1] w = np.ascontiguousarray(w_arr, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(b_arr, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], f = w.shape[0]
    out_arr = np.empty((n, f, h, wd), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k, c, di, dj, si, sj
    cdef double acc
    for i in range(n):
        for c in range(f):
            for j in range(h):
                for k in range(wd):
                    acc = b[c]
                    for di in range(3):
                        si = j + di - 1
                        if si < 0 or si >= h:
                            continue
                        for dj in range(3):
                            sj = k + dj - 1
                            if sj < 0 or sj >= wd:
                                continue
                            acc += w[c, di, dj] * x[i, si, sj]
                    out[i, c, j, k] = acc
    return out_arr


def conv3x3_backward(cnp.ndarray x_arr, cnp.ndarray w_arr, cnp.ndarray dy_arr):
    cdef const double[:, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef const double[:, :, ::1] w = np.ascontiguousarray(w_arr, dtype=np.float64)
    cdef const double[:, :, :, ::1] dy = np.ascontiguousarray(dy_arr, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], f = w.shape[0]
    dx_arr = np.zeros((n, h, wd), dtype=np.float64)
    dw_arr = np.zeros((f, 3, 3), dtype=np.float64)
    db_arr = np.zeros(f, dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t i, j, k, c, di, dj, si, sj
    cdef double g
    for i in range(n):
        for c in range(f):
            for j in range(h):
                for k in range(wd):
                    g = dy[i, c, j, k]
                    db[c] += g
                    for di in range(3):
                        si = j + di - 1
                        if si < 0 or si >= h:
                            continue
                        for dj in range(3):
                            sj = k + dj - 1
                            if sj < 0 or sj >= wd:
                                continue
                            dw[c, di, dj] += g * x[i, si, sj]
                            dx[i, si, sj] += g * w[c, di, dj]
    return dx_arr, dw_arr, db_arr


def maxpool2_forward(cnp.ndarray x_arr):
    cdef const double[:, :, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], f = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = wd // 2
    out_arr = np.empty((n, f, h2, w2), dtype=np.float64)
    sw_arr = np.empty((n, f, h2, w2), dtype=np.uint8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] sw = sw_arr
    cdef Py_ssize_t i, c, p, q, di, dj
    cdef double best, v
    cdef unsigned char arg
    for i in range(n):
        for c in range(f):
            for p in range(h2):
                for q in range(w2):
                    best = x[i, c, 2 * p, 2 * q]
                    arg = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[i, c, 2 * p + di, 2 * q + dj]
                            if v > best:
                                best = v
                                arg = <unsigned char> (2 * di + dj)
                    out[i, c, p, q] = best
                    sw[i, c, p, q] = arg
    return out_arr, sw_arr


def maxpool2_backward(cnp.ndarray dy_arr, cnp.ndarray sw_arr, Py_ssize_t h, Py_ssize_t w):
    cdef const double[:, :, :, ::1] dy = np.ascontiguousarray(dy_arr, dtype=np.float64)
    cdef const unsigned char[:, :, :, ::1] sw = np.ascontiguousarray(sw_arr, dtype=np.uint8)
    cdef Py_ssize_t n = dy.shape[0], f = dy.shape[1], h2 = dy.shape[2], w2 = dy.shape[3]
    dx_arr = np.zeros((n, f, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, c, p, q
    cdef unsigned char s
    for i in range(n):
        for c in range(f):
            for p in range(h2):
                for q in range(w2):
                    s = sw[i, c, p, q]
                    dx[i, c, 2 * p + (s >> 1), 2 * q + (s & 1)] += dy[i, c, p, q]
    return dx_arr


def warp_bilinear(cnp.ndarray img_arr, cnp.ndarray m_arr, double fill, bint clamp_edges):
    cdef const double[:, ::1] img = np.ascontiguousarray(img_arr, dtype=np.float64)
    cdef const double[:, ::1] m = np.ascontiguousarray(m_arr, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, x0, y0, x1, y1
    cdef double sx, sy, sw, fx, fy, top, bot
    cdef bint inside
    for i in range(h):
        for j in range(w):
            sw = m[2, 0] * j + m[2, 1] * i + m[2, 2]
            sx = (m[0, 0] * j + m[0, 1] * i + m[0, 2]) / sw
            sy = (m[1, 0] * j + m[1, 1] * i + m[1, 2]) / sw
            if clamp_edges:
                inside = True
            else:
                inside = sx >= 0.0 and sx <= w - 1.0 and sy >= 0.0 and sy <= h - 1.0
            if sx < 0.0:
                sx = 0.0
            elif sx > w - 1.0:
                sx = w - 1.0
            if sy < 0.0:
                sy = 0.0
            elif sy > h - 1.0:
                sy = h - 1.0
            if not inside:
                out[i, j] = fill
                continue
            x0 = <Py_ssize_t> floor(sx)
            y0 = <Py_ssize_t> floor(sy)
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            fx = sx - x0
            fy = sy - y0
            top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
            bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
            out[i, j] = (1.0 - fy) * top + fy * bot
    return out_arr


def sepconv2d_clamp(cnp.ndarray img_arr, cnp.ndarray k_arr):
    cdef const double[:, ::1] img = np.ascontiguousarray(img_arr, dtype=np.float64)
    cdef const double[::1] k = np.ascontiguousarray(k_arr, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], taps = k.shape[0], r = taps // 2
    tmp_arr = np.zeros((h, w), dtype=np.float64)
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t, s
    for t in range(taps):
        for i in range(h):
            for j in range(w):
                s = j + t - r
                if s < 0:
                    s = 0
                elif s >= w:
                    s = w - 1
                tmp[i, j] += k[t] * img[i, s]
    for t in range(taps):
        for i in range(h):
            s = i + t - r
            if s < 0:
                s = 0
            elif s >= h:
                s = h - 1
            for j in range(w):
                out[i, j] += k[t] * tmp[s, j]
    return out_arr
