# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Schouten residual kernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def schouten_self(double[:, :, ::1] P, double[:, :, :, ::1] dP):
    cdef Py_ssize_t N = P.shape[0], n = P.shape[1]
    out = np.zeros((N, n, n, n))
    cdef double[:, :, :, ::1] R = out
    cdef Py_ssize_t p, i, j, k, l
    cdef double s
    for p in range(N):
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    s = 0.0
                    for l in range(n):
                        s += P[p, l, i] * dP[p, l, j, k] + P[p, l, j] * dP[p, l, k, i] + P[p, l, k] * dP[p, l, i, j]
                    R[p, i, j, k] = 2.0 * s
    return out


def schouten_self_max(double[:, :, ::1] P, double[:, :, :, ::1] dP):
    cdef Py_ssize_t N = P.shape[0], n = P.shape[1]
    out = np.zeros(N)
    cdef double[::1] M = out
    cdef Py_ssize_t p, i, j, k, l
    cdef double s, m
    for p in range(N):
        m = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                for k in range(j + 1, n):
                    s = 0.0
                    for l in range(n):
                        s += P[p, l, i] * dP[p, l, j, k] + P[p, l, j] * dP[p, l, k, i] + P[p, l, k] * dP[p, l, i, j]
                    s = fabs(2.0 * s)
                    if s > m or s != s:
                        m = s
        M[p] = m
    return out
