"""Compiled interpolation kernels for the ray transform.

All kernels apply tensor-product Lagrange stencils (2 taps: multilinear,
4 taps: cubic) one axis at a time.  Each forward (gather) kernel has a
matching transpose (scatter) kernel that visits exactly the same index set,
so the pair is an exact adjoint in floating point up to summation order.
"""

import numpy as np
import numba as nb


def lagrange_weights(alpha, taps: int):
    """Weights on nodes ``a0, ..., a0 + taps - 1`` for a point at ``alpha`` in [0, 1)."""
    a = np.asarray(alpha, float)
    if taps == 2:
        return np.stack([1 - a, a], axis=-1), 0
    if taps == 4:
        w = np.stack([-a * (a - 1) * (a - 2) / 6,
                      (a + 1) * (a - 1) * (a - 2) / 2,
                      -(a + 1) * a * (a - 2) / 2,
                      (a + 1) * a * (a - 1) / 6], axis=-1)
        return w, -1
    raise ValueError("taps must be 2 or 4")


@nb.njit(cache=True)
def _clip(o, p, n_src, n_dst):
    # destination indices q with some q + o + a in [0, n_src)
    lo = -o - (p - 1)
    hi = n_src - o
    if lo < 0:
        lo = 0
    if hi > n_dst:
        hi = n_dst
    return lo, hi


@nb.njit(cache=True)
def shift_gather_2d(f, js, off, W, scale, u):
    """``u[q] += scale_j sum_ab W0a W1b f[j, q0+o0+a, q1+o1+b]`` over listed slices."""
    N1, N2 = f.shape[1], f.shape[2]
    M1, M2 = u.shape
    p = W.shape[2]
    tmp = np.zeros((M1, N2))
    for jj in range(js.shape[0]):
        j = js[jj]
        o0, o1 = off[jj, 0], off[jj, 1]
        lo0, hi0 = _clip(o0, p, N1, M1)
        lo1, hi1 = _clip(o1, p, N2, M2)
        if lo0 >= hi0 or lo1 >= hi1:
            continue
        for q0 in range(lo0, hi0):
            for i1 in range(N2):
                tmp[q0, i1] = 0.0
            for a in range(p):
                i0 = q0 + o0 + a
                if i0 < 0 or i0 >= N1:
                    continue
                w = W[jj, 0, a]
                for i1 in range(N2):
                    tmp[q0, i1] += w * f[j, i0, i1]
        for q0 in range(lo0, hi0):
            for q1 in range(lo1, hi1):
                s = 0.0
                for b in range(p):
                    i1 = q1 + o1 + b
                    if i1 >= 0 and i1 < N2:
                        s += W[jj, 1, b] * tmp[q0, i1]
                u[q0, q1] += scale[jj] * s


@nb.njit(cache=True)
def shift_scatter_2d(u, js, off, W, scale, g):
    """Transpose of :func:`shift_gather_2d`: accumulates into ``g[j]``."""
    N1, N2 = g.shape[1], g.shape[2]
    M1, M2 = u.shape
    p = W.shape[2]
    tmp = np.zeros((M1, N2))
    for jj in range(js.shape[0]):
        j = js[jj]
        o0, o1 = off[jj, 0], off[jj, 1]
        lo0, hi0 = _clip(o0, p, N1, M1)
        lo1, hi1 = _clip(o1, p, N2, M2)
        if lo0 >= hi0 or lo1 >= hi1:
            continue
        for q0 in range(lo0, hi0):
            for i1 in range(N2):
                tmp[q0, i1] = 0.0
            for q1 in range(lo1, hi1):
                v = scale[jj] * u[q0, q1]
                for b in range(p):
                    i1 = q1 + o1 + b
                    if i1 >= 0 and i1 < N2:
                        tmp[q0, i1] += W[jj, 1, b] * v
        for q0 in range(lo0, hi0):
            for a in range(p):
                i0 = q0 + o0 + a
                if i0 < 0 or i0 >= N1:
                    continue
                w = W[jj, 0, a]
                for i1 in range(N2):
                    g[j, i0, i1] += w * tmp[q0, i1]


@nb.njit(cache=True)
def shift_gather_3d(f, js, off, W, scale, u):
    N1, N2, N3 = f.shape[1], f.shape[2], f.shape[3]
    M1, M2, M3 = u.shape
    p = W.shape[2]
    t1 = np.zeros((M1, N2, N3))
    t2 = np.zeros((M1, M2, N3))
    for jj in range(js.shape[0]):
        j = js[jj]
        o0, o1, o2 = off[jj, 0], off[jj, 1], off[jj, 2]
        lo0, hi0 = _clip(o0, p, N1, M1)
        lo1, hi1 = _clip(o1, p, N2, M2)
        lo2, hi2 = _clip(o2, p, N3, M3)
        if lo0 >= hi0 or lo1 >= hi1 or lo2 >= hi2:
            continue
        for q0 in range(lo0, hi0):
            for i1 in range(N2):
                for i2 in range(N3):
                    t1[q0, i1, i2] = 0.0
            for a in range(p):
                i0 = q0 + o0 + a
                if i0 < 0 or i0 >= N1:
                    continue
                w = W[jj, 0, a]
                for i1 in range(N2):
                    for i2 in range(N3):
                        t1[q0, i1, i2] += w * f[j, i0, i1, i2]
        for q0 in range(lo0, hi0):
            for q1 in range(lo1, hi1):
                for i2 in range(N3):
                    t2[q0, q1, i2] = 0.0
                for b in range(p):
                    i1 = q1 + o1 + b
                    if i1 < 0 or i1 >= N2:
                        continue
                    w = W[jj, 1, b]
                    for i2 in range(N3):
                        t2[q0, q1, i2] += w * t1[q0, i1, i2]
        for q0 in range(lo0, hi0):
            for q1 in range(lo1, hi1):
                for q2 in range(lo2, hi2):
                    s = 0.0
                    for c in range(p):
                        i2 = q2 + o2 + c
                        if i2 >= 0 and i2 < N3:
                            s += W[jj, 2, c] * t2[q0, q1, i2]
                    u[q0, q1, q2] += scale[jj] * s


@nb.njit(cache=True)
def shift_scatter_3d(u, js, off, W, scale, g):
    N1, N2, N3 = g.shape[1], g.shape[2], g.shape[3]
    M1, M2, M3 = u.shape
    p = W.shape[2]
    t1 = np.zeros((M1, N2, N3))
    t2 = np.zeros((M1, M2, N3))
    for jj in range(js.shape[0]):
        j = js[jj]
        o0, o1, o2 = off[jj, 0], off[jj, 1], off[jj, 2]
        lo0, hi0 = _clip(o0, p, N1, M1)
        lo1, hi1 = _clip(o1, p, N2, M2)
        lo2, hi2 = _clip(o2, p, N3, M3)
        if lo0 >= hi0 or lo1 >= hi1 or lo2 >= hi2:
            continue
        for q0 in range(lo0, hi0):
            for q1 in range(lo1, hi1):
                for i2 in range(N3):
                    t2[q0, q1, i2] = 0.0
                for q2 in range(lo2, hi2):
                    v = scale[jj] * u[q0, q1, q2]
                    for c in range(p):
                        i2 = q2 + o2 + c
                        if i2 >= 0 and i2 < N3:
                            t2[q0, q1, i2] += W[jj, 2, c] * v
        for q0 in range(lo0, hi0):
            for i1 in range(N2):
                for i2 in range(N3):
                    t1[q0, i1, i2] = 0.0
            for q1 in range(lo1, hi1):
                for b in range(p):
                    i1 = q1 + o1 + b
                    if i1 < 0 or i1 >= N2:
                        continue
                    w = W[jj, 1, b]
                    for i2 in range(N3):
                        t1[q0, i1, i2] += w * t2[q0, q1, i2]
        for q0 in range(lo0, hi0):
            for a in range(p):
                i0 = q0 + o0 + a
                if i0 < 0 or i0 >= N1:
                    continue
                w = W[jj, 0, a]
                for i1 in range(N2):
                    for i2 in range(N3):
                        g[j, i0, i1, i2] += w * t1[q0, i1, i2]


@nb.njit(cache=True)
def point_stencil(coords, dims, taps, cols, vals, valid):
    """Tensor Lagrange stencil of scattered points on a uniform grid.

    ``coords`` are fractional grid indices ``(P, n)``; writes flat column
    indices and weights ``(P, taps**n)``.  Stencil nodes outside the grid
    are dropped (weight zero, ``valid`` false).
    """
    P, n = coords.shape
    K = taps ** n
    a0 = 0 if taps == 2 else -1
    w1 = np.empty((n, taps))
    base = np.empty(n, np.int64)
    for ip in range(P):
        for k in range(n):
            c = coords[ip, k]
            m = np.int64(np.floor(c))
            al = c - m
            base[k] = m + a0
            if taps == 2:
                w1[k, 0] = 1 - al
                w1[k, 1] = al
            else:
                w1[k, 0] = -al * (al - 1) * (al - 2) / 6
                w1[k, 1] = (al + 1) * (al - 1) * (al - 2) / 2
                w1[k, 2] = -(al + 1) * al * (al - 2) / 2
                w1[k, 3] = (al + 1) * al * (al - 1) / 6
        for kk in range(K):
            rem = kk
            flat = 0
            w = 1.0
            ok = True
            for k in range(n - 1, -1, -1):
                a = rem % taps
                rem //= taps
                idx = base[k] + a
                if idx < 0 or idx >= dims[k]:
                    ok = False
                w *= w1[k, a]
            if ok:
                stride = 1
                rem = kk
                for k in range(n - 1, -1, -1):
                    a = rem % taps
                    rem //= taps
                    flat += (base[k] + a) * stride
                    stride *= dims[k]
                cols[ip, kk] = flat
                vals[ip, kk] = w
                valid[ip, kk] = True
            else:
                cols[ip, kk] = 0
                vals[ip, kk] = 0.0
                valid[ip, kk] = False
