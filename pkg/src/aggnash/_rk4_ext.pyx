# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 kernel for affine switched systems.

Same contract as ``aggnash._rk4_py.rk4_affine``.
"""

import numpy as np


cdef void _affine(const double[:, ::1] M, const double[::1] b,
                  const double[:, ::1] Y, double[:, ::1] K) noexcept nogil:
    cdef Py_ssize_t d = M.shape[0]
    cdef Py_ssize_t k = Y.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double acc
    for i in range(d):
        for c in range(k):
            acc = 0.0
            for j in range(d):
                acc = acc + M[i, j] * Y[j, c]
            K[i, c] = acc + b[i]


cdef void _axpy(const double[:, ::1] Y, double a, const double[:, ::1] K,
                double[:, ::1] T) noexcept nogil:
    cdef Py_ssize_t i, c
    for i in range(Y.shape[0]):
        for c in range(Y.shape[1]):
            T[i, c] = Y[i, c] + a * K[i, c]


cdef Py_ssize_t _run(const double[:, ::1] M, const double[::1] b,
                     double[:, ::1] Y, double h, Py_ssize_t n_steps,
                     Py_ssize_t stride, double[:, :, ::1] out, double limit,
                     double[:, ::1] K1, double[:, ::1] K2, double[:, ::1] K3,
                     double[:, ::1] K4, double[:, ::1] T) noexcept nogil:
    cdef Py_ssize_t d = Y.shape[0]
    cdef Py_ssize_t k = Y.shape[1]
    cdef double half = 0.5 * h
    cdef double sixth = h / 6.0
    cdef double limit2 = limit * limit
    cdef double sq, v
    cdef Py_ssize_t step, i, c, j = 0
    for step in range(n_steps):
        _affine(M, b, Y, K1)
        _axpy(Y, half, K1, T)
        _affine(M, b, T, K2)
        _axpy(Y, half, K2, T)
        _affine(M, b, T, K3)
        _axpy(Y, h, K3, T)
        _affine(M, b, T, K4)
        sq = 0.0
        for i in range(d):
            for c in range(k):
                v = Y[i, c] + sixth * (K1[i, c] + 2.0 * K2[i, c]
                                       + 2.0 * K3[i, c] + K4[i, c])
                Y[i, c] = v
                sq = sq + v * v
        if not sq <= limit2:
            return step
        if (step + 1) % stride == 0:
            for i in range(d):
                for c in range(k):
                    out[j, i, c] = Y[i, c]
            j += 1
    return n_steps


def rk4_affine(const double[:, ::1] M, const double[::1] b, double[:, ::1] Y,
               double h, Py_ssize_t n_steps, Py_ssize_t stride,
               double[:, :, ::1] out, double limit):
    cdef Py_ssize_t d = Y.shape[0]
    cdef Py_ssize_t k = Y.shape[1]
    cdef double[:, ::1] K1 = np.empty((d, k))
    cdef double[:, ::1] K2 = np.empty((d, k))
    cdef double[:, ::1] K3 = np.empty((d, k))
    cdef double[:, ::1] K4 = np.empty((d, k))
    cdef double[:, ::1] T = np.empty((d, k))
    cdef Py_ssize_t done
    with nogil:
        done = _run(M, b, Y, h, n_steps, stride, out, limit, K1, K2, K3, K4, T)
    return done
