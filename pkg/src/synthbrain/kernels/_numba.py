"""Numba-compiled hot kernels.

Numerically equivalent to kernels._numpy.  Convolutions are written
row-wise: outer loops walk (channel, x, y) while the innermost loop runs
over a contiguous z row, which LLVM vectorizes well on a single core.
Reductions happen in a fixed order, so results are deterministic.
"""

import numpy as np
from numba import njit, prange


@njit(fastmath=True, cache=True)
def _conv3d_fwd_rows(xp, w, b, X, Y, Z):
    C = xp.shape[0]
    F = w.shape[0]
    k = w.shape[2]
    y = np.empty((F, X, Y, Z), dtype=xp.dtype)
    yrow = np.empty(Z, dtype=xp.dtype)
    for f in range(F):
        bf = b[f]
        for ix in range(X):
            for iy in range(Y):
                for iz in range(Z):
                    yrow[iz] = bf
                for c in range(C):
                    for a in range(k):
                        for bb in range(k):
                            row = xp[c, ix + a, iy + bb]
                            for d in range(k):
                                wv = w[f, c, a, bb, d]
                                for iz in range(Z):
                                    yrow[iz] += wv * row[iz + d]
                for iz in range(Z):
                    y[f, ix, iy, iz] = yrow[iz]
    return y


def conv3d_forward(x, w, b):
    r = w.shape[2] // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (r, r)))
    return _conv3d_fwd_rows(xp, w, b, x.shape[1], x.shape[2], x.shape[3])


@njit(fastmath=True, cache=True)
def _conv3d_bwd_rows(xp, w, gyp, X, Y, Z):
    C = xp.shape[0]
    F = w.shape[0]
    k = w.shape[2]
    r = k // 2
    gx = np.empty((C, X, Y, Z), dtype=xp.dtype)
    gw = np.zeros((F, C, k, k, k), dtype=xp.dtype)
    gb = np.zeros(F, dtype=xp.dtype)
    grow = np.empty(Z, dtype=xp.dtype)
    # input gradient: full correlation of gy with the flipped kernel
    for c in range(C):
        for ix in range(X):
            for iy in range(Y):
                for iz in range(Z):
                    grow[iz] = 0.0
                for f in range(F):
                    for a in range(k):
                        for bb in range(k):
                            row = gyp[f, ix + a, iy + bb]
                            for d in range(k):
                                wv = w[f, c, k - 1 - a, k - 1 - bb, k - 1 - d]
                                for iz in range(Z):
                                    grow[iz] += wv * row[iz + d]
                for iz in range(Z):
                    gx[c, ix, iy, iz] = grow[iz]
    # weight and bias gradients: row dot products against the padded input
    for f in range(F):
        sb = 0.0
        for ix in range(X):
            for iy in range(Y):
                gyrow = gyp[f, ix + r, iy + r]
                for iz in range(Z):
                    sb += gyrow[iz + r]
                for c in range(C):
                    for a in range(k):
                        for bb in range(k):
                            xrow = xp[c, ix + a, iy + bb]
                            for d in range(k):
                                acc = 0.0
                                for iz in range(Z):
                                    acc += gyrow[iz + r] * xrow[iz + d]
                                gw[f, c, a, bb, d] += acc
        gb[f] = sb
    return gx, gw, gb


def conv3d_backward(x, w, gy):
    r = w.shape[2] // 2
    pad = ((0, 0), (r, r), (r, r), (r, r))
    return _conv3d_bwd_rows(np.pad(x, pad), w, np.pad(gy, pad),
                            x.shape[1], x.shape[2], x.shape[3])


@njit(parallel=True, cache=True)
def _maxpool2(x):
    C, X, Y, Z = x.shape
    Xh, Yh, Zh = X // 2, Y // 2, Z // 2
    y = np.empty((C, Xh, Yh, Zh), dtype=x.dtype)
    arg = np.empty((C, Xh, Yh, Zh), dtype=np.int8)
    for c in prange(C):
        for ix in range(Xh):
            for iy in range(Yh):
                for iz in range(Zh):
                    best = x[c, 2 * ix, 2 * iy, 2 * iz]
                    bi = 0
                    idx = 0
                    for a in range(2):
                        for bb in range(2):
                            for d in range(2):
                                v = x[c, 2 * ix + a, 2 * iy + bb, 2 * iz + d]
                                if v > best:
                                    best = v
                                    bi = idx
                                idx += 1
                    y[c, ix, iy, iz] = best
                    arg[c, ix, iy, iz] = bi
    return y, arg


def maxpool2_forward(x):
    return _maxpool2(x)


@njit(parallel=True, cache=True)
def _maxpool2_back(arg, gy):
    C, Xh, Yh, Zh = gy.shape
    gx = np.zeros((C, 2 * Xh, 2 * Yh, 2 * Zh), dtype=gy.dtype)
    for c in prange(C):
        for ix in range(Xh):
            for iy in range(Yh):
                for iz in range(Zh):
                    bi = arg[c, ix, iy, iz]
                    a = bi // 4
                    bb = (bi // 2) % 2
                    d = bi % 2
                    gx[c, 2 * ix + a, 2 * iy + bb, 2 * iz + d] = \
                        gy[c, ix, iy, iz]
    return gx


def maxpool2_backward(arg, gy):
    return _maxpool2_back(arg, gy)


@njit(parallel=True, cache=True)
def sample_trilinear(vol, cx, cy, cz):
    X, Y, Z = vol.shape
    n = cx.shape[0]
    out = np.empty(n, dtype=vol.dtype)
    for i in prange(n):
        x = min(max(cx[i], 0.0), X - 1.0)
        y = min(max(cy[i], 0.0), Y - 1.0)
        z = min(max(cz[i], 0.0), Z - 1.0)
        x0 = int(np.floor(x))
        y0 = int(np.floor(y))
        z0 = int(np.floor(z))
        if x0 > X - 2:
            x0 = max(X - 2, 0)
        if y0 > Y - 2:
            y0 = max(Y - 2, 0)
        if z0 > Z - 2:
            z0 = max(Z - 2, 0)
        x1 = min(x0 + 1, X - 1)
        y1 = min(y0 + 1, Y - 1)
        z1 = min(z0 + 1, Z - 1)
        fx = x - x0
        fy = y - y0
        fz = z - z0
        c00 = vol[x0, y0, z0] * (1 - fx) + vol[x1, y0, z0] * fx
        c10 = vol[x0, y1, z0] * (1 - fx) + vol[x1, y1, z0] * fx
        c01 = vol[x0, y0, z1] * (1 - fx) + vol[x1, y0, z1] * fx
        c11 = vol[x0, y1, z1] * (1 - fx) + vol[x1, y1, z1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        out[i] = c0 * (1 - fz) + c1 * fz
    return out


@njit(parallel=True, cache=True)
def sample_nearest(vol, cx, cy, cz):
    X, Y, Z = vol.shape
    n = cx.shape[0]
    out = np.empty(n, dtype=vol.dtype)
    for i in prange(n):
        ix = int(np.rint(min(max(cx[i], 0.0), X - 1.0)))
        iy = int(np.rint(min(max(cy[i], 0.0), Y - 1.0)))
        iz = int(np.rint(min(max(cz[i], 0.0), Z - 1.0)))
        out[i] = vol[ix, iy, iz]
    return out
