# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Direct-loop float64 kernels: conv2d (stride 1, zero pad) and 2x2 max pool.

API mirrors numpy_impl so the dispatching package can swap backends freely.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def conv2d_forward(object x_in, object w_in, int pad):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=4] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    if w.shape[1] != c:
        raise ValueError(f"channel mismatch: input has {c}, filters expect {w.shape[1]}")
    cdef Py_ssize_t ho = h + 2 * pad - kh + 1
    cdef Py_ssize_t wo = wid + 2 * pad - kw + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"kernel {kh}x{kw} with pad {pad} does not fit {h}x{wid} input")
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros((b, o, ho, wo), dtype=np.float64)
    cdef double[:, :, :, :] xv = x, wv = w, ov = out
    cdef Py_ssize_t ib, io, ic, i, j, u, v, r, s
    cdef double acc
    with nogil:
        for ib in range(b):
            for io in range(o):
                for i in range(ho):
                    for j in range(wo):
                        acc = 0.0
                        for ic in range(c):
                            for u in range(kh):
                                r = i + u - pad
                                if r < 0 or r >= h:
                                    continue
                                for v in range(kw):
                                    s = j + v - pad
                                    if s < 0 or s >= wid:
                                        continue
                                    acc += xv[ib, ic, r, s] * wv[io, ic, u, v]
                        ov[ib, io, i, j] = acc
    return out


def conv2d_backward_x(object dy_in, object w_in, int pad):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] dy = np.ascontiguousarray(dy_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=4] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef Py_ssize_t b = dy.shape[0], o = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t c = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t h = ho - 2 * pad + kh - 1
    cdef Py_ssize_t wid = wo - 2 * pad + kw - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=4] dx = np.zeros((b, c, h, wid), dtype=np.float64)
    cdef double[:, :, :, :] dyv = dy, wv = w, dxv = dx
    cdef Py_ssize_t ib, io, ic, i, j, u, v, r, s
    cdef double g
    with nogil:
        for ib in range(b):
            for io in range(o):
                for i in range(ho):
                    for j in range(wo):
                        g = dyv[ib, io, i, j]
                        if g == 0.0:
                            continue
                        for ic in range(c):
                            for u in range(kh):
                                r = i + u - pad
                                if r < 0 or r >= h:
                                    continue
                                for v in range(kw):
                                    s = j + v - pad
                                    if s < 0 or s >= wid:
                                        continue
                                    dxv[ib, ic, r, s] += g * wv[io, ic, u, v]
    return dx


def conv2d_backward_w(object x_in, object dy_in, int kh, int kw, int pad):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=4] dy = np.ascontiguousarray(dy_in, dtype=np.float64)
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t o = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] dw = np.zeros((o, c, kh, kw), dtype=np.float64)
    cdef double[:, :, :, :] xv = x, dyv = dy, dwv = dw
    cdef Py_ssize_t ib, io, ic, i, j, u, v, r, s
    cdef double g
    with nogil:
        for ib in range(b):
            for io in range(o):
                for i in range(ho):
                    for j in range(wo):
                        g = dyv[ib, io, i, j]
                        if g == 0.0:
                            continue
                        for ic in range(c):
                            for u in range(kh):
                                r = i + u - pad
                                if r < 0 or r >= h:
                                    continue
                                for v in range(kw):
                                    s = j + v - pad
                                    if s < 0 or s >= wid:
                                        continue
                                    dwv[io, ic, u, v] += g * xv[ib, ic, r, s]
    return dw


def maxpool2_forward(object x_in):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.empty((b, c, ho, wo), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=4] idx = np.empty((b, c, ho, wo), dtype=np.int64)
    cdef double[:, :, :, :] xv = x, ov = out
    cdef cnp.int64_t[:, :, :, :] iv = idx
    cdef Py_ssize_t ib, ic, i, j, u, v, k
    cdef double best, cur
    cdef Py_ssize_t besti
    with nogil:
        for ib in range(b):
            for ic in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = xv[ib, ic, 2 * i, 2 * j]
                        besti = 0
                        k = 0
                        for u in range(2):
                            for v in range(2):
                                cur = xv[ib, ic, 2 * i + u, 2 * j + v]
                                # strict > keeps the first maximum in scan order
                                if cur > best:
                                    best = cur
                                    besti = k
                                k += 1
                        ov[ib, ic, i, j] = best
                        iv[ib, ic, i, j] = besti
    return out, idx


def maxpool2_backward(object dy_in, object idx_in, int h, int w):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] dy = np.ascontiguousarray(dy_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=4] idx = np.ascontiguousarray(idx_in, dtype=np.int64)
    cdef Py_ssize_t b = dy.shape[0], c = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] dx = np.zeros((b, c, h, w), dtype=np.float64)
    cdef double[:, :, :, :] dyv = dy, dxv = dx
    cdef cnp.int64_t[:, :, :, :] iv = idx
    cdef Py_ssize_t ib, ic, i, j, k
    with nogil:
        for ib in range(b):
            for ic in range(c):
                for i in range(ho):
                    for j in range(wo):
                        k = iv[ib, ic, i, j]
                        dxv[ib, ic, 2 * i + k // 2, 2 * j + k % 2] += dyv[ib, ic, i, j]
    return dx
