"""Stencil kernels for the method-of-lines problems.

Each kernel has a compiled loop form (``*_loop``) and a vectorized numpy form
(``*_vec``). The public dispatchers pick one according to
:data:`glmqs._accel.USE_NUMBA`, or an explicit ``use_numba`` argument.
"""

import numpy as np

from ._accel import USE_NUMBA, jit


# Burgers: u_t = -u u_x + d u_xx on interior nodes, Dirichlet zero at both ends

@jit
def burgers_rhs_loop(u, d, k):
    n = u.shape[0]
    out = np.empty(n)
    dk2 = d / (k * k)
    for i in range(n):
        left = u[i - 1] if i > 0 else 0.0
        right = u[i + 1] if i < n - 1 else 0.0
        ui = u[i]
        if ui >= 0.0:
            conv = -ui * (ui - left) / k
        else:
            conv = -ui * (right - ui) / k
        out[i] = conv + dk2 * (right - 2.0 * ui + left)
    return out


def burgers_rhs_vec(u, d, k):
    padded = np.concatenate(([0.0], u, [0.0]))
    left, right = padded[:-2], padded[2:]
    back = u * (u - left)
    fwd = u * (right - u)
    conv = -np.where(u >= 0.0, back, fwd) / k
    return conv + d / (k * k) * (right - 2.0 * u + left)


@jit
def burgers_jac_loop(u, d, k):
    n = u.shape[0]
    ab = np.zeros((3, n))
    dk2 = d / (k * k)
    for i in range(n):
        left = u[i - 1] if i > 0 else 0.0
        right = u[i + 1] if i < n - 1 else 0.0
        ui = u[i]
        if ui >= 0.0:
            diag = -(2.0 * ui - left) / k
            sub = ui / k
            sup = 0.0
        else:
            diag = -(right - 2.0 * ui) / k
            sub = 0.0
            sup = -ui / k
        ab[1, i] = diag - 2.0 * dk2
        if i > 0:
            ab[2, i - 1] = sub + dk2
        if i < n - 1:
            ab[0, i + 1] = sup + dk2
    return ab


def burgers_jac_vec(u, d, k):
    n = u.size
    padded = np.concatenate(([0.0], u, [0.0]))
    left, right = padded[:-2], padded[2:]
    pos = u >= 0.0
    dk2 = d / (k * k)
    ab = np.zeros((3, n))
    ab[1] = np.where(pos, -(2.0 * u - left), -(right - 2.0 * u)) / k - 2.0 * dk2
    ab[2, :-1] = (np.where(pos, u, 0.0) / k + dk2)[1:]
    ab[0, 1:] = (np.where(pos, 0.0, -u) / k + dk2)[:-1]
    return ab


# Gray-Scott on an M x M cell grid, reflecting (zero-flux) edges

@jit
def grayscott_rhs_loop(y, m, d1, d2, feed, kill, k):
    n = m * m
    out = np.empty(2 * n)
    inv_k2 = 1.0 / (k * k)
    for i in range(m):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < m - 1 else m - 1
        for j in range(m):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < m - 1 else m - 1
            c = i * m + j
            u = y[c]
            v = y[n + c]
            lap_u = (y[ip * m + j] + y[im * m + j] + y[i * m + jp] + y[i * m + jm] - 4.0 * u) * inv_k2
            lap_v = (y[n + ip * m + j] + y[n + im * m + j] + y[n + i * m + jp] + y[n + i * m + jm]
                     - 4.0 * v) * inv_k2
            uvv = u * v * v
            out[c] = d1 * lap_u - uvv + feed * (1.0 - u)
            out[n + c] = d2 * lap_v + uvv - (feed + kill) * v
    return out


def _laplacian_vec(field, k):
    p = np.pad(field, 1, mode="edge")
    return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4.0 * field) / (k * k)


def grayscott_rhs_vec(y, m, d1, d2, feed, kill, k):
    n = m * m
    u = y[:n].reshape(m, m)
    v = y[n:].reshape(m, m)
    uvv = u * v * v
    fu = d1 * _laplacian_vec(u, k) - uvv + feed * (1.0 - u)
    fv = d2 * _laplacian_vec(v, k) + uvv - (feed + kill) * v
    return np.concatenate((fu.ravel(), fv.ravel()))


def _pick(loop, vec, use_numba):
    if use_numba is None:
        use_numba = USE_NUMBA
    return loop if use_numba else vec


def burgers_rhs(u, d, k, use_numba=None):
    return _pick(burgers_rhs_loop, burgers_rhs_vec, use_numba)(np.asarray(u, dtype=float), d, k)


def burgers_jac(u, d, k, use_numba=None):
    return _pick(burgers_jac_loop, burgers_jac_vec, use_numba)(np.asarray(u, dtype=float), d, k)


def grayscott_rhs(y, m, d1, d2, feed, kill, k, use_numba=None):
    fn = _pick(grayscott_rhs_loop, grayscott_rhs_vec, use_numba)
    return fn(np.asarray(y, dtype=float), m, d1, d2, feed, kill, k)
