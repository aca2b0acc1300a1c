# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels: direct loops, OpenMP-parallel over the batch."""

import numpy as np

cimport numpy as cnp
from cython.parallel import prange

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   int stride, int padding):
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Co = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t Ho = (H + 2 * padding - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((B, Co, Ho, Wo), dtype=np.float64)
    cdef double[:, :, :, ::1] y = out
    cdef Py_ssize_t b, co, ci, oh, ow, i, j, ih, iw
    cdef double acc
    for b in prange(B, nogil=True, schedule="static"):
        for co in range(Co):
            for oh in range(Ho):
                for ow in range(Wo):
                    acc = 0.0
                    for ci in range(Ci):
                        for i in range(k):
                            ih = oh * stride - padding + i
                            if ih < 0 or ih >= H:
                                continue
                            for j in range(k):
                                iw = ow * stride - padding + j
                                if iw < 0 or iw >= W:
                                    continue
                                acc = acc + x[b, ci, ih, iw] * w[co, ci, i, j]
                    y[b, co, oh, ow] = acc
    return out


def conv2d_backward_input(double[:, :, :, ::1] g, double[:, :, :, ::1] w,
                          int stride, int padding, int H, int W):
    cdef Py_ssize_t B = g.shape[0], Co = g.shape[1], Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t Ci = w.shape[1], k = w.shape[2]
    out = np.zeros((B, Ci, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, co, ci, oh, ow, i, j, ih, iw
    cdef double gv
    for b in prange(B, nogil=True, schedule="static"):
        for co in range(Co):
            for oh in range(Ho):
                for ow in range(Wo):
                    gv = g[b, co, oh, ow]
                    for ci in range(Ci):
                        for i in range(k):
                            ih = oh * stride - padding + i
                            if ih < 0 or ih >= H:
                                continue
                            for j in range(k):
                                iw = ow * stride - padding + j
                                if iw < 0 or iw >= W:
                                    continue
                                dx[b, ci, ih, iw] += gv * w[co, ci, i, j]
    return out


def conv2d_backward_kernel(double[:, :, :, ::1] g, double[:, :, :, ::1] x,
                           int stride, int padding, int k):
    cdef Py_ssize_t B = g.shape[0], Co = g.shape[1], Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t Ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    out = np.zeros((Co, Ci, k, k), dtype=np.float64)
    cdef double[:, :, :, ::1] dw = out
    cdef Py_ssize_t b, co, ci, oh, ow, i, j, ih, iw
    for co in prange(Co, nogil=True, schedule="static"):
        for b in range(B):
            for oh in range(Ho):
                for ow in range(Wo):
                    for ci in range(Ci):
                        for i in range(k):
                            ih = oh * stride - padding + i
                            if ih < 0 or ih >= H:
                                continue
                            for j in range(k):
                                iw = ow * stride - padding + j
                                if iw < 0 or iw >= W:
                                    continue
                                dw[co, ci, i, j] += g[b, co, oh, ow] * x[b, ci, ih, iw]
    return out
