"""Pure-Python theta-scheme marches; same contract as the compiled kernel."""

import numpy as np
from scipy.linalg import solve_banded


def _tri_apply(lo, di, up, v):
    out = di * v
    out[1:] += lo * v[:-1]
    out[:-1] += up * v[1:]
    return out


def _step_matrix(m, lo, di, up, dt, theta):
    ab = np.zeros((3, m.size))
    ab[0, 1:] = theta * up
    ab[1] = m / dt + theta * di
    ab[2, :-1] = theta * lo
    return ab


def march_forward(m, lo, di, up, rhs, y0, dt, theta):
    N, n = rhs.shape
    Y = np.empty((N + 1, n))
    Y[0] = y0
    r = 1.0 - theta
    for k in range(1, N + 1):
        d = m / dt * Y[k - 1] - r * _tri_apply(lo[k - 1], di[k - 1], up[k - 1], Y[k - 1])
        Y[k] = solve_banded((1, 1), _step_matrix(m, lo[k], di[k], up[k], dt, theta), d + rhs[k - 1])
    return Y


def march_adjoint(m, lo, di, up, rhs, dt, theta):
    N, n = rhs.shape
    Z = np.empty((N, n))
    r = 1.0 - theta
    for k in range(N, 0, -1):
        d = rhs[k - 1].copy()
        if k < N:
            d += m / dt * Z[k] - r * _tri_apply(up[k], di[k], lo[k], Z[k])
        Z[k - 1] = solve_banded((1, 1), _step_matrix(m, up[k], di[k], lo[k], dt, theta), d)
    z0 = m / dt * Z[0] - r * _tri_apply(up[0], di[0], lo[0], Z[0])
    return Z, z0
