# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Heun integrator for the T^2 flow with a real-form Fourier drift."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline void _drift(double x1, double x2, int Mh, int M,
                        const long long[:, ::1] kvec,
                        const double[:, ::1] A, const double[:, ::1] B,
                        const double[::1] mean,
                        double* p1r, double* p1i, double* p2r, double* p2i,
                        double* out) noexcept nogil:
    # out[0:2] value, out[2:6] jacobian rows
    cdef double c1 = cos(x1), s1 = sin(x1), c2 = cos(x2), s2 = sin(x2)
    cdef int j, k1, k2
    cdef double zr, zi, g0, g1
    p1r[0] = 1.0
    p1i[0] = 0.0
    for j in range(1, M + 1):
        p1r[j] = p1r[j - 1] * c1 - p1i[j - 1] * s1
        p1i[j] = p1r[j - 1] * s1 + p1i[j - 1] * c1
    # p2[M + j] = e^{i j x2}, j = -M..M
    p2r[M] = 1.0
    p2i[M] = 0.0
    for j in range(1, M + 1):
        p2r[M + j] = p2r[M + j - 1] * c2 - p2i[M + j - 1] * s2
        p2i[M + j] = p2r[M + j - 1] * s2 + p2i[M + j - 1] * c2
        p2r[M - j] = p2r[M + j]
        p2i[M - j] = -p2i[M + j]
    out[0] = mean[0]
    out[1] = mean[1]
    out[2] = 0.0
    out[3] = 0.0
    out[4] = 0.0
    out[5] = 0.0
    for j in range(Mh):
        k1 = <int>kvec[j, 0]
        k2 = <int>kvec[j, 1]
        zr = p1r[k1] * p2r[M + k2] - p1i[k1] * p2i[M + k2]
        zi = p1r[k1] * p2i[M + k2] + p1i[k1] * p2r[M + k2]
        out[0] += A[j, 0] * zr + B[j, 0] * zi
        out[1] += A[j, 1] * zr + B[j, 1] * zi
        g0 = B[j, 0] * zr - A[j, 0] * zi
        g1 = B[j, 1] * zr - A[j, 1] * zi
        out[2] += g0 * k1
        out[3] += g0 * k2
        out[4] += g1 * k1
        out[5] += g1 * k2


def torus_heun(x0, dW, kvec, coefA, coefB, mean, double dt, record):
    """Compiled counterpart of :func:`mnsl._kernels_py.torus_heun` (identical contract)."""
    cdef const double[:, ::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double[:, :, ::1] dWv = np.ascontiguousarray(dW, dtype=np.float64)
    cdef const long long[:, ::1] kv = np.ascontiguousarray(kvec, dtype=np.int64).reshape(-1, 2)
    cdef const double[:, :, ::1] Av = np.ascontiguousarray(coefA, dtype=np.float64)
    cdef const double[:, :, ::1] Bv = np.ascontiguousarray(coefB, dtype=np.float64)
    cdef const double[:, ::1] mv = np.ascontiguousarray(mean, dtype=np.float64)
    cdef const long long[::1] rec = np.ascontiguousarray(record, dtype=np.int64)
    cdef Py_ssize_t S = dWv.shape[0], n_steps = dWv.shape[1], P = x0v.shape[0], R = rec.shape[0]
    cdef int Mh = kv.shape[0]
    cdef int M = 0
    cdef Py_ssize_t j
    for j in range(Mh):
        M = max(M, abs(<int>kv[j, 0]), abs(<int>kv[j, 1]))
    slot_np = np.full(n_steps + 1, -1, dtype=np.int64)
    for j in range(R):
        slot_np[rec[j]] = j
    cdef const long long[::1] slot = slot_np
    Xout_np = np.empty((S, R, P, 2))
    Jout_np = np.empty((S, R, P, 2, 2))
    cdef double[:, :, :, ::1] Xout = Xout_np
    cdef double[:, :, :, :, ::1] Jout = Jout_np

    cdef Py_ssize_t s, p, step
    cdef long long r
    cdef double x1, x2, j00, j01, j10, j11
    cdef double y1, y2, k00, k01, k10, k11
    cdef double f[6]
    cdef double h[6]
    cdef double a00, a01, a10, a11, b00, b01, b10, b11
    cdef double g1, g2
    cdef double* buf
    cdef bint use_drift = Mh > 0

    with nogil:
        buf = <double*>malloc(4 * (2 * M + 2) * sizeof(double))
        for s in range(S):
            for p in range(P):
                x1 = x0v[p, 0]
                x2 = x0v[p, 1]
                j00 = 1.0
                j01 = 0.0
                j10 = 0.0
                j11 = 1.0
                r = slot[0]
                if r >= 0:
                    Xout[s, r, p, 0] = x1
                    Xout[s, r, p, 1] = x2
                    Jout[s, r, p, 0, 0] = j00
                    Jout[s, r, p, 0, 1] = j01
                    Jout[s, r, p, 1, 0] = j10
                    Jout[s, r, p, 1, 1] = j11
                for step in range(n_steps):
                    g1 = dWv[s, step, 0]
                    g2 = dWv[s, step, 1]
                    if use_drift:
                        _drift(x1, x2, Mh, M, kv, Av[step], Bv[step], mv[step],
                               buf, buf + (M + 1), buf + 2 * (M + 1), buf + 2 * (M + 1) + (2 * M + 1), f)
                        y1 = x1 + f[0] * dt + g1
                        y2 = x2 + f[1] * dt + g2
                        # D0 J
                        a00 = f[2] * j00 + f[3] * j10
                        a01 = f[2] * j01 + f[3] * j11
                        a10 = f[4] * j00 + f[5] * j10
                        a11 = f[4] * j01 + f[5] * j11
                        k00 = j00 + dt * a00
                        k01 = j01 + dt * a01
                        k10 = j10 + dt * a10
                        k11 = j11 + dt * a11
                        _drift(y1, y2, Mh, M, kv, Av[step + 1], Bv[step + 1], mv[step + 1],
                               buf, buf + (M + 1), buf + 2 * (M + 1), buf + 2 * (M + 1) + (2 * M + 1), h)
                        b00 = h[2] * k00 + h[3] * k10
                        b01 = h[2] * k01 + h[3] * k11
                        b10 = h[4] * k00 + h[5] * k10
                        b11 = h[4] * k01 + h[5] * k11
                        x1 = x1 + 0.5 * dt * (f[0] + h[0]) + g1
                        x2 = x2 + 0.5 * dt * (f[1] + h[1]) + g2
                        j00 = j00 + 0.5 * dt * (a00 + b00)
                        j01 = j01 + 0.5 * dt * (a01 + b01)
                        j10 = j10 + 0.5 * dt * (a10 + b10)
                        j11 = j11 + 0.5 * dt * (a11 + b11)
                    else:
                        x1 = x1 + (mv[step, 0] + mv[step + 1, 0]) * (0.5 * dt) + g1
                        x2 = x2 + (mv[step, 1] + mv[step + 1, 1]) * (0.5 * dt) + g2
                    r = slot[step + 1]
                    if r >= 0:
                        Xout[s, r, p, 0] = x1
                        Xout[s, r, p, 1] = x2
                        Jout[s, r, p, 0, 0] = j00
                        Jout[s, r, p, 0, 1] = j01
                        Jout[s, r, p, 1, 0] = j10
                        Jout[s, r, p, 1, 1] = j11
        free(buf)
    return Xout_np, Jout_np
