# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled theta-scheme marches for tridiagonal (1D) spatial operators.

Band layout per time level k (0..N): lo[k, i] = K[i+1, i], di[k, i] = K[i, i],
up[k, i] = K[i, i+1].  Step k solves

    (M/dt + theta K_k) y_k = (M/dt - (1-theta) K_{k-1}) y_{k-1} + rhs[k-1]

with M = diag(m).  ``march_adjoint`` applies the exact transpose of the
whole space-time system.
"""

import numpy as np


cdef void _thomas(double[::1] a, double[::1] b, double[::1] c, double[::1] d,
                  double[::1] cp, double[::1] x, Py_ssize_t n) noexcept nogil:
    # a: sub-diagonal (a[i] couples x[i-1] into row i), c: super-diagonal
    cdef Py_ssize_t i
    cdef double w
    cp[0] = c[0] / b[0]
    x[0] = d[0] / b[0]
    for i in range(1, n):
        w = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / w
        x[i] = (d[i] - a[i] * x[i - 1]) / w
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]


def march_forward(double[::1] m, double[:, ::1] lo, double[:, ::1] di,
                  double[:, ::1] up, double[:, ::1] rhs, double[::1] y0,
                  double dt, double theta):
    cdef Py_ssize_t N = rhs.shape[0], n = m.shape[0], k, i
    out = np.empty((N + 1, n))
    cdef double[:, ::1] Y = out
    cdef double[::1] a = np.zeros(n), b = np.empty(n), c = np.zeros(n)
    cdef double[::1] d = np.empty(n), cp = np.empty(n)
    cdef double r = 1.0 - theta, v
    with nogil:
        for i in range(n):
            Y[0, i] = y0[i]
        for k in range(1, N + 1):
            for i in range(n):
                v = (m[i] / dt - r * di[k - 1, i]) * Y[k - 1, i]
                if i > 0:
                    v -= r * lo[k - 1, i - 1] * Y[k - 1, i - 1]
                if i < n - 1:
                    v -= r * up[k - 1, i] * Y[k - 1, i + 1]
                d[i] = v + rhs[k - 1, i]
                b[i] = m[i] / dt + theta * di[k, i]
                if i > 0:
                    a[i] = theta * lo[k, i - 1]
                if i < n - 1:
                    c[i] = theta * up[k, i]
            _thomas(a, b, c, d, cp, Y[k], n)
    return out


def march_adjoint(double[::1] m, double[:, ::1] lo, double[:, ::1] di,
                  double[:, ::1] up, double[:, ::1] rhs, double dt, double theta):
    cdef Py_ssize_t N = rhs.shape[0], n = m.shape[0], k, i
    out = np.empty((N, n))
    z0 = np.empty(n)
    cdef double[:, ::1] Z = out
    cdef double[::1] Z0 = z0
    cdef double[::1] a = np.zeros(n), b = np.empty(n), c = np.zeros(n)
    cdef double[::1] d = np.empty(n), cp = np.empty(n)
    cdef double r = 1.0 - theta, v
    with nogil:
        for k in range(N, 0, -1):
            # transpose of the step-k matrix: sub <- up, super <- lo
            for i in range(n):
                v = rhs[k - 1, i]
                if k < N:
                    # B_k^T z_{k+1}, B_k = M/dt - (1-theta) K_k
                    v += (m[i] / dt - r * di[k, i]) * Z[k, i]
                    if i > 0:
                        v -= r * up[k, i - 1] * Z[k, i - 1]
                    if i < n - 1:
                        v -= r * lo[k, i] * Z[k, i + 1]
                d[i] = v
                b[i] = m[i] / dt + theta * di[k, i]
                if i > 0:
                    a[i] = theta * up[k, i - 1]
                if i < n - 1:
                    c[i] = theta * lo[k, i]
            _thomas(a, b, c, d, cp, Z[k - 1], n)
        for i in range(n):
            v = (m[i] / dt - r * di[0, i]) * Z[0, i]
            if i > 0:
                v -= r * up[0, i - 1] * Z[0, i - 1]
            if i < n - 1:
                v -= r * lo[0, i] * Z[0, i + 1]
            Z0[i] = v
    return out, z0
