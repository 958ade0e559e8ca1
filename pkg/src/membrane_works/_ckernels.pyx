# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics are identical to ``_pykernels``."""

import numpy as np
from libc.math cimport sqrt, isfinite

BACKEND = "cython"


cdef inline void _matvec(const double[:, ::1] m, const double[::1] f,
                         const double* x, double* out, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(d):
        acc = f[i]
        for j in range(d):
            acc = acc + m[i, j] * x[j]
        out[i] = acc


def rk4_linear(double[:, ::1] m, double[::1] f, double[::1] x0,
               double h, Py_ssize_t n_out, Py_ssize_t substeps):
    """Classic RK4 on ``x' = m @ x + f``.

    Returns ``(states, n_valid)``; ``states`` has ``n_out + 1`` rows (the first is
    ``x0``), of which only the first ``n_valid`` are meaningful when a non-finite
    value stopped the integration early.
    """
    cdef Py_ssize_t d = x0.shape[0]
    if m.shape[0] != d or m.shape[1] != d or f.shape[0] != d:
        raise ValueError("shape mismatch between matrix, forcing and state")
    out_arr = np.empty((n_out + 1, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    work_arr = np.empty(6 * d, dtype=np.float64)
    cdef double[::1] work = work_arr
    cdef double* x = &work[0]
    cdef double* k1 = &work[d]
    cdef double* k2 = &work[2 * d]
    cdef double* k3 = &work[3 * d]
    cdef double* k4 = &work[4 * d]
    cdef double* tmp = &work[5 * d]
    cdef Py_ssize_t i, s, j
    cdef Py_ssize_t n_valid = n_out + 1
    cdef double half = 0.5 * h
    cdef double sixth = h / 6.0
    cdef bint ok = True

    for j in range(d):
        x[j] = x0[j]
        out[0, j] = x0[j]

    with nogil:
        for i in range(1, n_out + 1):
            for s in range(substeps):
                _matvec(m, f, x, k1, d)
                for j in range(d):
                    tmp[j] = x[j] + half * k1[j]
                _matvec(m, f, tmp, k2, d)
                for j in range(d):
                    tmp[j] = x[j] + half * k2[j]
                _matvec(m, f, tmp, k3, d)
                for j in range(d):
                    tmp[j] = x[j] + h * k3[j]
                _matvec(m, f, tmp, k4, d)
                for j in range(d):
                    x[j] = x[j] + sixth * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            for j in range(d):
                if not isfinite(x[j]):
                    ok = False
                out[i, j] = x[j]
            if not ok:
                n_valid = i
                break
    return out_arr, n_valid


def allan_sigma(double[::1] y, Py_ssize_t k, double f0):
    """Non-overlapping two-sample deviation of ``y / f0`` at window length ``k``.

    NaN samples invalidate their window; only adjacent valid windows form a
    difference. Returns ``(sigma, n_diffs)``; ``sigma`` is NaN when no
    difference is available.
    """
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t n_win = n // k
    cdef Py_ssize_t w, i, n_diffs = 0
    cdef double s, prev = 0.0, cur, d, acc = 0.0
    cdef bint prev_ok = False, cur_ok
    with nogil:
        for w in range(n_win):
            s = 0.0
            cur_ok = True
            for i in range(w * k, (w + 1) * k):
                if not isfinite(y[i]):
                    cur_ok = False
                s = s + y[i]
            cur = s / k
            if cur_ok and prev_ok:
                d = (cur - prev) / f0
                acc = acc + d * d
                n_diffs += 1
            prev = cur
            prev_ok = cur_ok
    if n_diffs == 0:
        return float("nan"), 0
    return sqrt(acc / (2.0 * n_diffs)), n_diffs
