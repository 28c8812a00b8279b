# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled 1-D convolution kernels (float64, C-contiguous, valid padding)."""

import numpy as np


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w, double[::1] b):
    """Valid cross-correlation: x (B,C,L), w (F,C,T), b (F) -> (B,F,L-T+1)."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t F = w.shape[0], T = w.shape[2]
    cdef Py_ssize_t P = L - T + 1
    out = np.empty((B, F, P), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t i, f, c, p, t
    cdef double acc
    with nogil:
        for i in range(B):
            for f in range(F):
                for p in range(P):
                    acc = b[f]
                    for c in range(C):
                        for t in range(T):
                            acc += w[f, c, t] * x[i, c, p + t]
                    y[i, f, p] = acc
    return out


def conv1d_backward(double[:, :, ::1] x, double[:, :, ::1] w,
                    double[:, :, ::1] up):
    """Gradients of conv1d_forward: returns (dx, dw, db) for upstream up (B,F,P)."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t F = w.shape[0], T = w.shape[2]
    cdef Py_ssize_t P = up.shape[2]
    dx_arr = np.zeros((B, C, L), dtype=np.float64)
    dw_arr = np.zeros((F, C, T), dtype=np.float64)
    db_arr = np.zeros(F, dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t i, f, c, p, t
    cdef double g
    with nogil:
        for i in range(B):
            for f in range(F):
                for p in range(P):
                    g = up[i, f, p]
                    db[f] += g
                    for c in range(C):
                        for t in range(T):
                            dw[f, c, t] += g * x[i, c, p + t]
                            dx[i, c, p + t] += g * w[f, c, t]
    return dx_arr, dw_arr, db_arr
