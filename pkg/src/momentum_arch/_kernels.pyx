# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sequential attention scans; same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _dot(const double[:, ::1] a, Py_ssize_t i, const double[::1] z, Py_ssize_t d) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t r
    for r in range(d):
        acc += a[i, r] * z[r]
    return acc


def _prepare(fq, fk, v):
    fq = np.ascontiguousarray(fq, dtype=np.float64)
    fk = np.ascontiguousarray(fk, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if fq.ndim != 2 or fk.shape != fq.shape or v.ndim != 2 or v.shape[0] != fk.shape[0]:
        raise ValueError(f"bad scan shapes {fq.shape}, {fk.shape}, {v.shape}")
    return fq, fk, v


def causal_linear_scan(fq, fk, v):
    fq, fk, v = _prepare(fq, fk, v)
    cdef const double[:, ::1] Q = fq
    cdef const double[:, ::1] K = fk
    cdef const double[:, ::1] V = v
    cdef Py_ssize_t n = K.shape[0], d = K.shape[1], dv = V.shape[1]
    out_arr = np.empty((n, dv))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] s = np.zeros((d, dv))
    cdef double[::1] z = np.zeros(d)
    cdef Py_ssize_t i, r, c
    cdef long n_outer = 0, bad = -1
    cdef double den, acc
    with nogil:
        for i in range(n):
            for r in range(d):
                for c in range(dv):
                    s[r, c] += K[i, r] * V[i, c]
                z[r] += K[i, r]
            n_outer += 1
            den = _dot(Q, i, z, d)
            if not den > 0.0:
                if bad < 0:
                    bad = i
                for c in range(dv):
                    out[i, c] = 0.0 / 0.0
                continue
            for c in range(dv):
                acc = 0.0
                for r in range(d):
                    acc += Q[i, r] * s[r, c]
                out[i, c] = acc / den
    return out_arr, n_outer, bad


def causal_momentum_scan(fq, fk, v, double beta, double gamma):
    fq, fk, v = _prepare(fq, fk, v)
    cdef const double[:, ::1] Q = fq
    cdef const double[:, ::1] K = fk
    cdef const double[:, ::1] V = v
    cdef Py_ssize_t n = K.shape[0], d = K.shape[1], dv = V.shape[1]
    out_arr = np.empty((n, dv))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] s = np.zeros((d, dv))
    cdef double[:, ::1] m = np.zeros((d, dv))
    cdef double[::1] z = np.zeros(d)
    cdef Py_ssize_t i, r, c
    cdef long n_outer = 0, bad = -1
    cdef double den, acc
    with nogil:
        for i in range(n):
            for r in range(d):
                for c in range(dv):
                    m[r, c] = beta * m[r, c] - K[i, r] * V[i, c]
                    s[r, c] -= gamma * m[r, c]
                z[r] += K[i, r]
            n_outer += 1
            den = _dot(Q, i, z, d)
            if not den > 0.0:
                if bad < 0:
                    bad = i
                for c in range(dv):
                    out[i, c] = 0.0 / 0.0
                continue
            for c in range(dv):
                acc = 0.0
                for r in range(d):
                    acc += Q[i, r] * s[r, c]
                out[i, c] = acc / den
    return out_arr, n_outer, bad


def momentum_carry_scan(fq, fk, v, double beta, double gamma):
    fq, fk, v = _prepare(fq, fk, v)
    cdef const double[:, ::1] Q = fq
    cdef const double[:, ::1] K = fk
    cdef const double[:, ::1] V = v
    cdef Py_ssize_t n = K.shape[0], d = K.shape[1], dv = V.shape[1]
    out_arr = np.empty((n, dv))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] A = np.zeros((d, dv))
    cdef double[:, ::1] C = np.zeros((d, dv))
    cdef double[::1] z = np.zeros(d)
    cdef Py_ssize_t i, r, c
    cdef long n_outer = 0, bad = -1
    cdef double den, acc, p
    cdef double scale = gamma / (1.0 - beta)
    with nogil:
        for i in range(n):
            for r in range(d):
                for c in range(dv):
                    p = K[i, r] * V[i, c]
                    A[r, c] += p
                    C[r, c] = beta * (C[r, c] + p)
                z[r] += K[i, r]
            n_outer += 1
            den = _dot(Q, i, z, d)
            if not den > 0.0:
                if bad < 0:
                    bad = i
                for c in range(dv):
                    out[i, c] = 0.0 / 0.0
                continue
            for c in range(dv):
                acc = 0.0
                for r in range(d):
                    acc += Q[i, r] * (A[r, c] - C[r, c])
                out[i, c] = scale * acc / den
    return out_arr, n_outer, bad
